#include "clsr/image.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace clsr {

std::string to_string(const RoiBox& box) {
  return "(" + std::to_string(box.top) + "," + std::to_string(box.left) + "," +
         std::to_string(box.height) + "," + std::to_string(box.width) + ")";
}

namespace {

Image from_rgb_bytes(const std::vector<std::uint8_t>& buf, int h, int w) {
  Image img = Image::chw(3, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = (static_cast<std::size_t>(y) * w + x) * 3;
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(buf[p + c]) / 255.0f;
    }
  }
  return img;
}

std::vector<std::uint8_t> to_rgb_bytes(const Image& img) {
  if (img.rank() != 3 || img.channels() != 3) {
    throw ShapeError("PNG encode expects a 3-channel image, got " + shape_str(img.shape()));
  }
  const int h = img.height(), w = img.width();
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = (static_cast<std::size_t>(y) * w + x) * 3;
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        buf[p + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  return buf;
}

Image finish_read(png_image& image, const std::string& what) {
  if (image.format != PNG_FORMAT_RGB) {
    png_image_free(&image);
    throw DecodeError(what + ": not an 8-bit RGB PNG");
  }
  const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError(what + ": " + msg);
  }
  return from_rgb_bytes(buf, h, w);
}

png_image blank_png_image() {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  return image;
}

}  // namespace

Image load_png(const std::filesystem::path& path) {
  png_image image = blank_png_image();
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw DecodeError(path.string() + ": " + image.message);
  }
  return finish_read(image, path.string());
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image image = blank_png_image();
  if (bytes.empty() || !png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DecodeError(std::string("png stream: ") + (bytes.empty() ? "empty" : image.message));
  }
  return finish_read(image, "png stream");
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  const auto rgb = to_rgb_bytes(img);
  png_image image = blank_png_image();
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, rgb.data(), 0, nullptr)) {
    throw Error(std::string("png encode: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
    throw Error(std::string("png encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

void save_png(const Image& img, const std::filesystem::path& path) {
  const auto bytes = encode_png(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

double cubic_kernel(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct AxisWeights {
  std::vector<int> start;
  std::vector<std::vector<double>> w;
};

AxisWeights bicubic_axis(int in, int out) {
  AxisWeights aw;
  aw.start.resize(out);
  aw.w.resize(out);
  const double scale = static_cast<double>(out) / in;
  const double kscale = std::min(scale, 1.0);
  const double support = 2.0 / kscale;
  for (int i = 0; i < out; ++i) {
    const double center = (i + 0.5) / scale - 0.5;
    const int lo = static_cast<int>(std::floor(center - support));
    const int hi = static_cast<int>(std::ceil(center + support));
    aw.start[i] = lo;
    double sum = 0.0;
    for (int j = lo; j <= hi; ++j) {
      const double v = cubic_kernel((j - center) * kscale);
      aw.w[i].push_back(v);
      sum += v;
    }
    for (double& v : aw.w[i]) v /= sum;
  }
  return aw;
}

}  // namespace

Image resize_bicubic(const Image& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("resize target must be at least 1x1");
  const int c = img.channels(), h = img.height(), w = img.width();
  if (out_h == h && out_w == w) return img;
  const AxisWeights ay = bicubic_axis(h, out_h);
  const AxisWeights ax = bicubic_axis(w, out_w);

  // Horizontal pass into double precision, then vertical.
  std::vector<double> tmp(static_cast<std::size_t>(c) * h * out_w, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        const auto& wx = ax.w[x];
        for (std::size_t t = 0; t < wx.size(); ++t) {
          const int sx = std::clamp(ax.start[x] + static_cast<int>(t), 0, w - 1);
          acc += wx[t] * img.at(ch, y, sx);
        }
        tmp[(static_cast<std::size_t>(ch) * h + y) * out_w + x] = acc;
      }
    }
  }
  Image out = Image::chw(c, out_h, out_w);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < out_h; ++y) {
      const auto& wy = ay.w[y];
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (std::size_t t = 0; t < wy.size(); ++t) {
          const int sy = std::clamp(ay.start[y] + static_cast<int>(t), 0, h - 1);
          acc += wy[t] * tmp[(static_cast<std::size_t>(ch) * h + sy) * out_w + x];
        }
        out.at(ch, y, x) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
      }
    }
  }
  return out;
}

Image degrade(const Image& hr, int scale) {
  if (scale < 1 || hr.height() % scale || hr.width() % scale) {
    throw ShapeError("HR size " + shape_str(hr.shape()) + " not divisible by scale " +
                     std::to_string(scale));
  }
  return resize_bicubic(hr, hr.height() / scale, hr.width() / scale);
}

LinearTaps LinearTaps::make(int in, int out) {
  LinearTaps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w0.resize(out);
  t.w1.resize(out);
  const double ratio = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    const double frac = src - i0;
    t.i0[i] = i0;
    t.i1[i] = i1;
    t.w1[i] = static_cast<float>(frac);
    t.w0[i] = static_cast<float>(1.0 - frac);
  }
  return t;
}

template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("resize target must be at least 1x1");
  const int c = img.channels(), h = img.height(), w = img.width();
  const LinearTaps ty = LinearTaps::make(h, out_h);
  const LinearTaps tx = LinearTaps::make(w, out_w);
  Tensor<T> out = Tensor<T>::chw(c, out_h, out_w);
  for (int ch = 0; ch < c; ++ch) {
    const T* src = img.channel(ch);
    T* dst = out.channel(ch);
    for (int y = 0; y < out_h; ++y) {
      const T* r0 = src + static_cast<std::size_t>(ty.i0[y]) * w;
      const T* r1 = src + static_cast<std::size_t>(ty.i1[y]) * w;
      const T wy0 = static_cast<T>(ty.w0[y]), wy1 = static_cast<T>(ty.w1[y]);
      for (int x = 0; x < out_w; ++x) {
        const T wx0 = static_cast<T>(tx.w0[x]), wx1 = static_cast<T>(tx.w1[x]);
        const T top = wx0 * r0[tx.i0[x]] + wx1 * r0[tx.i1[x]];
        const T bot = wx0 * r1[tx.i0[x]] + wx1 * r1[tx.i1[x]];
        dst[static_cast<std::size_t>(y) * out_w + x] = wy0 * top + wy1 * bot;
      }
    }
  }
  return out;
}

template Tensor<float> resize_bilinear(const Tensor<float>&, int, int);
template Tensor<double> resize_bilinear(const Tensor<double>&, int, int);

Image clamp01(Image img) {
  for (float& v : img.storage()) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

template <class T>
Tensor<T> crop(const Tensor<T>& img, const RoiBox& box) {
  if (!box.fits(img.height(), img.width())) {
    throw BoundsError("box " + to_string(box) + " outside image " + shape_str(img.shape()));
  }
  Tensor<T> out = Tensor<T>::chw(img.channels(), box.height, box.width);
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < box.height; ++y) {
      const T* src = &img.at(c, box.top + y, box.left);
      std::copy(src, src + box.width, &out.at(c, y, 0));
    }
  }
  return out;
}

template Tensor<float> crop(const Tensor<float>&, const RoiBox&);
template Tensor<double> crop(const Tensor<double>&, const RoiBox&);

template <class T>
Tensor<T> reflect_window(const Tensor<T>& img, const RoiBox& window) {
  const int h = img.height(), w = img.width();
  Tensor<T> out = Tensor<T>::chw(img.channels(), window.height, window.width);
  std::vector<int> xs(window.width);
  for (int x = 0; x < window.width; ++x) xs[x] = reflect_index(window.left + x, w);
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < window.height; ++y) {
      const int sy = reflect_index(window.top + y, h);
      for (int x = 0; x < window.width; ++x) out.at(c, y, x) = img.at(c, sy, xs[x]);
    }
  }
  return out;
}

template Tensor<float> reflect_window(const Tensor<float>&, const RoiBox&);
template Tensor<double> reflect_window(const Tensor<double>&, const RoiBox&);

RoiBox padded_window(const RoiBox& box, int pad, int align) {
  if (pad < 0) throw ConfigError("pad must be non-negative");
  if (align < 1) throw ConfigError("alignment must be positive");
  const auto round_up = [align](int v) { return (v + align - 1) / align * align; };
  return {box.top - pad, box.left - pad, round_up(box.height + 2 * pad),
          round_up(box.width + 2 * pad)};
}

PaddedPatch pad_from_context(const Image& context, const RoiBox& box, int pad, int align) {
  if (!box.fits(context.height(), context.width())) {
    throw BoundsError("box " + to_string(box) + " outside context " + shape_str(context.shape()));
  }
  PaddedPatch p;
  p.outer = padded_window(box, pad, align);
  p.inner = {pad, pad, box.height, box.width};
  p.patch = reflect_window(context, p.outer);
  return p;
}

}  // namespace clsr
