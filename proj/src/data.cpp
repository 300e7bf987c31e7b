#include "mcinet/data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace mcinet {

namespace {

constexpr std::array<const char*, kNumShapeFamilies> kFamilyNames{
    "disc",    "ring",    "square",   "frame",    "triangle",   "diamond", "plus",    "x_cross",
    "hexagon", "star",    "crescent", "ellipse",  "semicircle", "l_shape", "t_shape", "arrow"};

struct Point {
  double u, v;
};

/// Vertices in counter-clockwise order.
bool inside_convex(const std::vector<Point>& pts, double u, double v) {
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Point& a = pts[i];
    const Point& b = pts[(i + 1) % pts.size()];
    if ((b.u - a.u) * (v - a.v) - (b.v - a.v) * (u - a.u) < 0) return false;
  }
  return true;
}

bool inside_rect(double u, double v, double u0, double u1, double v0, double v1) {
  return u >= u0 && u <= u1 && v >= v0 && v <= v1;
}

std::vector<Point> regular_polygon(int n, double radius, double phase) {
  std::vector<Point> pts;
  for (int i = 0; i < n; ++i) {
    const double a = phase + 2.0 * std::numbers::pi * i / n;
    pts.push_back({radius * std::cos(a), radius * std::sin(a)});
  }
  return pts;
}

const std::vector<Point>& triangle_vertices() {
  static const auto pts = regular_polygon(3, 1.0, std::numbers::pi / 2);
  return pts;
}

const std::vector<Point>& hexagon_vertices() {
  static const auto pts = regular_polygon(6, 0.95, 0.0);
  return pts;
}

constexpr double kStarOuter = 1.0;
constexpr double kStarInner = 0.42;

bool inside_star(double u, double v) {
  static const auto inner = regular_polygon(5, kStarInner, std::numbers::pi / 2 + std::numbers::pi / 5);
  static const auto outer = regular_polygon(5, kStarOuter, std::numbers::pi / 2);
  if (inside_convex(inner, u, v)) return true;
  for (int i = 0; i < 5; ++i) {
    const std::vector<Point> tip{inner[static_cast<std::size_t>((i + 4) % 5)], outer[static_cast<std::size_t>(i)],
                                 inner[static_cast<std::size_t>(i)]};
    if (inside_convex(tip, u, v)) return true;
  }
  return false;
}

bool inside_plus(double u, double v) {
  return inside_rect(u, v, -0.3, 0.3, -0.95, 0.95) || inside_rect(u, v, -0.95, 0.95, -0.3, 0.3);
}

float quantise(double v) {
  const long k = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<float>(k) / 255.0f;
}

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(v * 255.0f)); }

using Colour = std::array<double, 3>;

Colour random_colour(Rng& rng) { return {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)}; }

Colour jitter(Rng& rng, const Colour& c, double amount) {
  return {c[0] + rng.uniform(-amount, amount), c[1] + rng.uniform(-amount, amount),
          c[2] + rng.uniform(-amount, amount)};
}

void paint(std::vector<double>& canvas, Index size, const Mask& coverage, const Colour& c) {
  const Index plane = size * size;
  for (Index p = 0; p < plane; ++p) {
    if (!coverage.data()[p]) continue;
    for (Index ch = 0; ch < 3; ++ch) canvas[static_cast<std::size_t>(ch * plane + p)] = c[static_cast<std::size_t>(ch)];
  }
}

void textured_background(std::vector<double>& canvas, Index size, Rng& rng) {
  const Colour base = random_colour(rng);
  const Index plane = size * size;
  for (Index ch = 0; ch < 3; ++ch) {
    double fx[2], fy[2], phase[2], amp[2];
    for (int w = 0; w < 2; ++w) {
      const double freq = rng.uniform(0.1, 0.6);
      const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
      fx[w] = freq * std::cos(dir);
      fy[w] = freq * std::sin(dir);
      phase[w] = rng.uniform(0.0, 2.0 * std::numbers::pi);
      amp[w] = rng.uniform(0.03, 0.12);
    }
    for (Index r = 0; r < size; ++r) {
      for (Index c = 0; c < size; ++c) {
        double value = base[static_cast<std::size_t>(ch)];
        for (int w = 0; w < 2; ++w) value += amp[w] * std::sin(fx[w] * c + fy[w] * r + phase[w]);
        canvas[static_cast<std::size_t>(ch * plane + r * size + c)] = value;
      }
    }
  }
}

double foreground_fraction(const Mask& m) {
  return static_cast<double>((m != 0).count()) / static_cast<double>(m.size());
}

Sample render_sample(int class_id, const Colour& target_colour, Index size, const FoldSpec& folds, Rng& rng) {
  Sample s;
  const double side = static_cast<double>(size);
  for (int attempt = 0;; ++attempt) {
    if (attempt == 1000) throw ValidationError("could not place a shape with a valid foreground fraction");
    ShapeInstance t;
    t.family = class_id;
    t.radius = rng.uniform(0.16, 0.34) * side;
    t.cx = rng.uniform(0.25, 0.75) * side;
    t.cy = rng.uniform(0.25, 0.75) * side;
    t.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    Mask m = rasterize(t, size);
    const double frac = foreground_fraction(m);
    if (frac >= kMinForeground && frac <= kMaxForeground) {
      s.target = t;
      s.mask = std::move(m);
      break;
    }
  }

  std::vector<double> canvas(static_cast<std::size_t>(3 * size * size));
  textured_background(canvas, size, rng);

  const int n_distractors = rng.integer(0, 2);
  for (int i = 0; i < n_distractors; ++i) {
    ShapeInstance d;
    d.family = rng.integer(0, folds.num_classes() - 2);
    if (d.family >= class_id) ++d.family;
    d.radius = rng.uniform(0.1, 0.22) * side;
    d.cx = rng.uniform(0.0, 1.0) * side;
    d.cy = rng.uniform(0.0, 1.0) * side;
    d.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const bool same = rng.uniform() < kDistractorSameColour;
    const Colour c = same ? jitter(rng, target_colour, 0.05) : random_colour(rng);
    paint(canvas, size, rasterize(d, size), c);
    s.distractors.push_back(d);
  }
  paint(canvas, size, s.mask, jitter(rng, target_colour, 0.05));

  s.image = Image({3, size, size});
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    s.image[static_cast<Index>(i)] = quantise(canvas[i] + rng.normal(0.0, 0.03));
  }
  return s;
}

void hash_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  h = fnv1a(std::string_view(static_cast<const char*>(data), n), h);
}

void hash_sample(std::uint64_t& h, const Sample& s) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(s.image.size()));
  for (Index i = 0; i < s.image.size(); ++i) bytes[static_cast<std::size_t>(i)] = to_byte(s.image[i]);
  hash_bytes(h, bytes.data(), bytes.size());
  hash_bytes(h, s.mask.data(), static_cast<std::size_t>(s.mask.size()));
}

/// Reads the whitespace/comment separated header fields of a netpbm file.
std::string next_token(std::istream& in) {
  std::string tok;
  while (true) {
    const int c = in.get();
    if (c == EOF) break;
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

Index parse_dim(const std::string& tok, const std::filesystem::path& path) {
  try {
    const long v = std::stol(tok);
    if (v <= 0) throw FormatError("");
    return v;
  } catch (const std::exception&) {
    throw FormatError("bad image header in " + path.string());
  }
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

}  // namespace

std::string family_name(int class_id) {
  if (class_id < 0 || class_id >= kNumShapeFamilies) throw ValidationError("invalid class id " + std::to_string(class_id));
  return kFamilyNames[static_cast<std::size_t>(class_id)];
}

bool family_contains(int family, double u, double v) {
  const double r2 = u * u + v * v;
  switch (static_cast<ShapeFamily>(family)) {
    case ShapeFamily::disc:
      return r2 <= 1.0;
    case ShapeFamily::ring:
      return r2 <= 1.0 && r2 >= 0.55 * 0.55;
    case ShapeFamily::square:
      return std::max(std::abs(u), std::abs(v)) <= 0.75;
    case ShapeFamily::frame: {
      const double m = std::max(std::abs(u), std::abs(v));
      return m <= 0.8 && m > 0.45;
    }
    case ShapeFamily::triangle:
      return inside_convex(triangle_vertices(), u, v);
    case ShapeFamily::diamond:
      return std::abs(u) + std::abs(v) <= 0.95;
    case ShapeFamily::plus:
      return inside_plus(u, v);
    case ShapeFamily::x_cross: {
      const double c = std::numbers::sqrt2 / 2;
      return inside_plus(c * (u + v), c * (v - u));
    }
    case ShapeFamily::hexagon:
      return inside_convex(hexagon_vertices(), u, v);
    case ShapeFamily::star:
      return inside_star(u, v);
    case ShapeFamily::crescent:
      return r2 <= 1.0 && (u - 0.45) * (u - 0.45) + v * v > 0.75 * 0.75;
    case ShapeFamily::ellipse:
      return u * u + (v / 0.55) * (v / 0.55) <= 1.0;
    case ShapeFamily::semicircle:
      return v >= -0.3 && u * u + (v + 0.3) * (v + 0.3) <= 0.95 * 0.95;
    case ShapeFamily::l_shape:
      return inside_rect(u, v, -0.7, -0.25, -0.7, 0.7) || inside_rect(u, v, -0.7, 0.7, -0.7, -0.25);
    case ShapeFamily::t_shape:
      return inside_rect(u, v, -0.7, 0.7, 0.3, 0.7) || inside_rect(u, v, -0.22, 0.22, -0.7, 0.7);
    case ShapeFamily::arrow:
      return inside_rect(u, v, -0.9, 0.15, -0.2, 0.2) ||
             inside_convex({{0.15, -0.55}, {0.9, 0.0}, {0.15, 0.55}}, u, v);
  }
  throw ValidationError("invalid class id " + std::to_string(family));
}

std::array<double, 2> ShapeInstance::to_canonical(double x, double y) const {
  const double dx = x - cx;
  const double dy = y - cy;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {(dx * c + dy * s) / radius, (-dx * s + dy * c) / radius};
}

bool ShapeInstance::contains(double x, double y) const {
  const auto [u, v] = to_canonical(x, y);
  return family_contains(family, u, v);
}

Mask rasterize(const ShapeInstance& shape, Index size) {
  if (shape.family < 0 || shape.family >= kNumShapeFamilies) {
    throw ValidationError("invalid class id " + std::to_string(shape.family));
  }
  Mask m(size, size);
  for (Index r = 0; r < size; ++r) {
    for (Index c = 0; c < size; ++c) {
      m(r, c) = shape.contains(static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5) ? 1 : 0;
    }
  }
  return m;
}

FoldSpec::FoldSpec(int num_classes, int num_folds) : num_classes_(num_classes), num_folds_(num_folds) {
  if (num_folds < 2 || num_classes < num_folds || num_classes % num_folds != 0) {
    throw ConfigError("classes must split evenly into at least two folds");
  }
  if (num_classes > kNumShapeFamilies) {
    throw ConfigError("at most " + std::to_string(kNumShapeFamilies) + " shape classes are available");
  }
}

int FoldSpec::fold_of(int class_id) const {
  if (class_id < 0 || class_id >= num_classes_) throw ValidationError("invalid class id " + std::to_string(class_id));
  return class_id / (num_classes_ / num_folds_);
}

std::vector<int> FoldSpec::test_classes(int fold) const {
  if (fold < 0 || fold >= num_folds_) throw ValidationError("invalid fold " + std::to_string(fold));
  std::vector<int> out;
  for (int c = 0; c < num_classes_; ++c) {
    if (fold_of(c) == fold) out.push_back(c);
  }
  return out;
}

std::vector<int> FoldSpec::train_classes(int fold) const {
  if (fold < 0 || fold >= num_folds_) throw ValidationError("invalid fold " + std::to_string(fold));
  std::vector<int> out;
  for (int c = 0; c < num_classes_; ++c) {
    if (fold_of(c) != fold) out.push_back(c);
  }
  return out;
}

Episode generate_episode(int class_id, Index k, std::uint64_t seed, Index size, const FoldSpec& folds) {
  if (class_id < 0 || class_id >= folds.num_classes()) throw ValidationError("invalid class id " + std::to_string(class_id));
  if (k < 1) throw ValidationError("an episode needs at least one support shot");
  if (size < 8) throw ValidationError("image size must be at least 8");
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(class_id), static_cast<std::uint64_t>(k),
                       static_cast<std::uint64_t>(size)}));
  Episode ep;
  ep.class_id = class_id;
  ep.fold_id = folds.fold_of(class_id);
  ep.seed = seed;
  const Colour target_colour = random_colour(rng);
  for (Index i = 0; i < k; ++i) ep.supports.push_back(render_sample(class_id, target_colour, size, folds, rng));
  ep.query = render_sample(class_id, target_colour, size, folds, rng);
  return ep;
}

Episode sample_train_episode(const FoldSpec& folds, int fold, Index k, std::uint64_t seed, std::uint64_t step,
                             std::uint64_t index, Index size) {
  const auto classes = folds.train_classes(fold);
  Rng rng(derive_seed({seed, step, index, 0x7a11}));
  const int c = classes[static_cast<std::size_t>(rng.integer(0, static_cast<int>(classes.size()) - 1))];
  return generate_episode(c, k, derive_seed({seed, step, index}), size, folds);
}

std::vector<Episode> sample_eval_suite(const FoldSpec& folds, int fold, Index n_episodes, Index k,
                                       std::uint64_t seed, Index size) {
  const auto classes = folds.test_classes(fold);
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(fold), 0xe7a1}));
  std::vector<Episode> suite;
  for (Index i = 0; i < n_episodes; ++i) {
    const int c = classes[static_cast<std::size_t>(rng.integer(0, static_cast<int>(classes.size()) - 1))];
    suite.push_back(generate_episode(c, k, derive_seed({seed, static_cast<std::uint64_t>(fold), static_cast<std::uint64_t>(i)}),
                                     size, folds));
  }
  return suite;
}

std::uint64_t episode_checksum(const Episode& ep) {
  std::uint64_t h = fnv1a("episode");
  const std::int64_t header[4] = {ep.class_id, ep.fold_id, static_cast<std::int64_t>(ep.seed), ep.shots()};
  hash_bytes(h, header, sizeof(header));
  for (const auto& s : ep.supports) hash_sample(h, s);
  hash_sample(h, ep.query);
  return h;
}

std::uint64_t suite_checksum(const std::vector<Episode>& suite) {
  std::uint64_t h = fnv1a("suite");
  for (const auto& ep : suite) {
    const std::uint64_t e = episode_checksum(ep);
    hash_bytes(h, &e, sizeof(e));
  }
  return h;
}

template <typename Scalar>
Tensor<Scalar> mask_tensor(const Mask& m) {
  Tensor<Scalar> t({1, 1, m.rows(), m.cols()});
  for (Index i = 0; i < m.size(); ++i) t[i] = m.data()[i] ? Scalar(1) : Scalar(0);
  return t;
}

template <typename Scalar>
EpisodeTensors<Scalar> to_tensors(const Episode& ep) {
  const Index k = ep.shots();
  const Index h = ep.size();
  const Index plane = h * h;
  EpisodeTensors<Scalar> t{Tensor<Scalar>({k, 3, h, h}), Tensor<Scalar>({k, 1, h, h}), Tensor<Scalar>({1, 3, h, h}),
                           mask_tensor<Scalar>(ep.query.mask)};
  for (Index i = 0; i < k; ++i) {
    const Sample& s = ep.supports[static_cast<std::size_t>(i)];
    if (s.mask.rows() != h || s.mask.cols() != h) throw ShapeError("support and query sizes differ");
    t.support_images.data().segment(i * 3 * plane, 3 * plane) = s.image.data().template cast<Scalar>();
    t.support_masks.data().segment(i * plane, plane) = mask_tensor<Scalar>(s.mask).data();
  }
  t.query_image.data() = ep.query.image.data().template cast<Scalar>();
  return t;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("write_ppm expects [3, H, W]");
  const Index h = image.dim(1), w = image.dim(2), plane = h * w;
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(3 * plane));
  for (Index p = 0; p < plane; ++p) {
    for (Index ch = 0; ch < 3; ++ch) bytes[static_cast<std::size_t>(3 * p + ch)] = to_byte(image[ch * plane + p]);
  }
  auto out = open_out(path);
  out << "P6\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  auto in = open_in(path);
  if (next_token(in) != "P6") throw FormatError(path.string() + " is not a binary PPM");
  const Index w = parse_dim(next_token(in), path);
  const Index h = parse_dim(next_token(in), path);
  if (next_token(in) != "255") throw FormatError(path.string() + ": only 8-bit PPM is supported");
  const Index plane = h * w;
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(3 * plane));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw FormatError(path.string() + " is truncated");
  Image image({3, h, w});
  for (Index p = 0; p < plane; ++p) {
    for (Index ch = 0; ch < 3; ++ch) {
      image[ch * plane + p] = static_cast<float>(bytes[static_cast<std::size_t>(3 * p + ch)]) / 255.0f;
    }
  }
  return image;
}

void write_pbm(const std::filesystem::path& path, const Mask& mask) {
  const Index h = mask.rows(), w = mask.cols(), row_bytes = (w + 7) / 8;
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(row_bytes * h), 0);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      if (mask(r, c)) bytes[static_cast<std::size_t>(r * row_bytes + c / 8)] |= static_cast<std::uint8_t>(0x80u >> (c % 8));
    }
  }
  auto out = open_out(path);
  out << "P4\n" << w << " " << h << "\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

Mask read_pbm(const std::filesystem::path& path) {
  auto in = open_in(path);
  if (next_token(in) != "P4") throw FormatError(path.string() + " is not a binary PBM");
  const Index w = parse_dim(next_token(in), path);
  const Index h = parse_dim(next_token(in), path);
  const Index row_bytes = (w + 7) / 8;
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(row_bytes * h));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw FormatError(path.string() + " is truncated");
  Mask m(h, w);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      m(r, c) = (bytes[static_cast<std::size_t>(r * row_bytes + c / 8)] >> (7 - c % 8)) & 1u;
    }
  }
  return m;
}

std::filesystem::path export_episodes(const std::filesystem::path& dir, const std::vector<Episode>& episodes) {
  std::filesystem::create_directories(dir);
  const auto manifest = dir / "manifest.txt";
  auto out = open_out(manifest);
  out << "# mcinet episode manifest v1\n";
  out << "episodes " << episodes.size() << "\n";
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const Episode& ep = episodes[e];
    char stem[32];
    std::snprintf(stem, sizeof(stem), "ep%05zu", e);
    out << "episode " << e << " class " << ep.class_id << " fold " << ep.fold_id << " seed " << ep.seed << " shots "
        << ep.shots() << "\n";
    auto emit = [&](const std::string& role, const Sample& s) {
      const std::string base = std::string(stem) + "_" + role;
      write_ppm(dir / (base + ".ppm"), s.image);
      write_pbm(dir / (base + ".pbm"), s.mask);
      out << (role == "q" ? "query " : "support ") << base << ".ppm " << base << ".pbm\n";
    };
    for (std::size_t i = 0; i < ep.supports.size(); ++i) emit("s" + std::to_string(i), ep.supports[i]);
    emit("q", ep.query);
  }
  if (!out) throw FormatError("failed writing " + manifest.string());
  return manifest;
}

std::vector<Episode> import_episodes(const std::filesystem::path& manifest) {
  auto in = open_in(manifest);
  const auto dir = manifest.parent_path();
  std::vector<Episode> episodes;
  std::size_t expected = 0;
  bool have_count = false;
  std::string line;
  auto fail = [&](const std::string& what) { throw FormatError(manifest.string() + ": " + what + ": " + line); };
  auto load = [&](std::istringstream& fields) {
    std::string img, mask;
    if (!(fields >> img >> mask)) fail("expected image and mask paths");
    Sample s;
    s.image = read_ppm(dir / img);
    s.mask = read_pbm(dir / mask);
    return s;
  };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string kind;
    fields >> kind;
    if (kind == "episodes") {
      if (!(fields >> expected)) fail("bad episode count");
      have_count = true;
    } else if (kind == "episode") {
      std::size_t index;
      std::string k_class, k_fold, k_seed, k_shots;
      Index shots;
      Episode ep;
      if (!(fields >> index >> k_class >> ep.class_id >> k_fold >> ep.fold_id >> k_seed >> ep.seed >> k_shots >> shots) ||
          k_class != "class" || k_fold != "fold" || k_seed != "seed" || k_shots != "shots") {
        fail("malformed episode header");
      }
      ep.supports.reserve(static_cast<std::size_t>(shots));
      episodes.push_back(std::move(ep));
    } else if (kind == "support") {
      if (episodes.empty()) fail("support before episode header");
      episodes.back().supports.push_back(load(fields));
    } else if (kind == "query") {
      if (episodes.empty()) fail("query before episode header");
      episodes.back().query = load(fields);
    } else {
      fail("unknown record");
    }
  }
  if (!have_count || episodes.size() != expected) throw FormatError(manifest.string() + ": episode count mismatch");
  for (const auto& ep : episodes) {
    if (ep.supports.empty() || ep.query.mask.size() == 0) throw FormatError(manifest.string() + ": incomplete episode");
  }
  return episodes;
}

template Tensor<float> mask_tensor<float>(const Mask&);
template Tensor<double> mask_tensor<double>(const Mask&);
template EpisodeTensors<float> to_tensors<float>(const Episode&);
template EpisodeTensors<double> to_tensors<double>(const Episode&);

}  // namespace mcinet
