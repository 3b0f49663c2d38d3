#include "jepa/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>

#include <jpeglib.h>
#include <png.h>

#include "jepa/tensor_file.hpp"
#include "jepa/types.hpp"

namespace jepa {

RawImage::RawImage(int h, int w, int c)
    : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, 0) {}

void RawImage::validate() const {
  if (height < 1 || width < 1 || channels < 1) {
    throw ContractViolation("image dimensions must be positive, got " + std::to_string(height) + "x" +
                            std::to_string(width) + "x" + std::to_string(channels));
  }
  if (pixels.size() != static_cast<std::size_t>(height) * width * channels) {
    throw ContractViolation("pixel buffer length does not match H*W*C");
  }
}

namespace {

struct Tap {
  int lo;
  int hi;
  double frac;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    taps[i] = {lo, std::min(lo + 1, in - 1), src - lo};
  }
  return taps;
}

}  // namespace

RawImage resize_bilinear(const RawImage& img, int out_h, int out_w) {
  img.validate();
  if (out_h < 1 || out_w < 1) throw ContractViolation("resize target must be positive");
  if (out_h == img.height && out_w == img.width) return img;
  RawImage out(out_h, out_w, img.channels);
  const auto ty = bilinear_taps(img.height, out_h);
  const auto tx = bilinear_taps(img.width, out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        const double top = img.at(ty[y].lo, tx[x].lo, c) * (1.0 - tx[x].frac) + img.at(ty[y].lo, tx[x].hi, c) * tx[x].frac;
        const double bot = img.at(ty[y].hi, tx[x].lo, c) * (1.0 - tx[x].frac) + img.at(ty[y].hi, tx[x].hi, c) * tx[x].frac;
        const double v = top * (1.0 - ty[y].frac) + bot * ty[y].frac;
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

RawImage center_crop_square(const RawImage& img) {
  img.validate();
  const int side = std::min(img.height, img.width);
  const int y0 = (img.height - side) / 2;
  const int x0 = (img.width - side) / 2;
  RawImage out(side, side, img.channels);
  for (int y = 0; y < side; ++y) {
    const auto* src = &img.pixels[(static_cast<std::size_t>(y + y0) * img.width + x0) * img.channels];
    std::copy_n(src, static_cast<std::size_t>(side) * img.channels, &out.pixels[static_cast<std::size_t>(y) * side * img.channels]);
  }
  return out;
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h -= std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const double m = v - c;
  for (auto& ch : rgb) ch += m;
  return rgb;
}

namespace {

RawImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw FormatError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RawImage out(static_cast<int>(image.height), static_cast<int>(image.width), 3);
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  std::array<char, JMSG_LENGTH_MAX> message{};
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message.data());
  std::longjmp(err->jump, 1);
}

RawImage read_jpeg(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) throw FormatError("cannot open " + path.string());

  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  RawImage out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw FormatError("cannot decode JPEG " + path.string() + ": " + err.message.data());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out = RawImage(static_cast<int>(cinfo.output_height), static_cast<int>(cinfo.output_width), 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = &out.pixels[static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3];
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

RawImage read_tensor_image(const std::filesystem::path& path) {
  const TensorFile file = TensorFile::load(path);
  const TensorEntry& e = file.at("image");
  if (e.dims.size() != 3 || e.dims[2] != 3) throw FormatError(path.string() + ": image tensor must be [H, W, 3]");
  RawImage img;
  img.height = static_cast<int>(e.dims[0]);
  img.width = static_cast<int>(e.dims[1]);
  img.channels = static_cast<int>(e.dims[2]);
  img.pixels.resize(e.data.size());
  for (std::size_t i = 0; i < e.data.size(); ++i) {
    const double v = e.data[i];
    if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) throw FormatError(path.string() + ": pixel values must be integers in [0, 255]");
    img.pixels[i] = static_cast<std::uint8_t>(v);
  }
  img.validate();
  return img;
}

void write_tensor_image(const std::filesystem::path& path, const RawImage& img) {
  img.validate();
  TensorFile f;
  f.add("image", {static_cast<std::uint64_t>(img.height), static_cast<std::uint64_t>(img.width),
                  static_cast<std::uint64_t>(img.channels)},
        std::vector<double>(img.pixels.begin(), img.pixels.end()));
  f.save(path);
}

RawImage read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path.string());
  std::array<unsigned char, 8> sig{};
  in.read(reinterpret_cast<char*>(sig.data()), sig.size());
  if (in.gcount() >= 8 && png_sig_cmp(sig.data(), 0, 8) == 0) return read_png(path);
  if (in.gcount() >= 3 && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) return read_jpeg(path);
  if (in.gcount() >= 4 && std::equal(sig.begin(), sig.begin() + 4, "JTNS")) return read_tensor_image(path);
  throw FormatError("unsupported image format: " + path.string());
}

void write_png(const std::filesystem::path& path, const RawImage& img) {
  img.validate();
  if (img.channels != 1 && img.channels != 3) throw ContractViolation("PNG output needs 1 or 3 channels");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw FormatError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

}  // namespace jepa
