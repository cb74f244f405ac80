#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <Eigen/Dense>

#include "entangle/dyngraph.hpp"
#include "entangle/simulator.hpp"

// Text formats. Panels and ground truth live in separate files so an
// estimator reading the panel has no path to the truth.
//
// Panel:
//   ENTANGLE_PANEL
//   format_version 1
//   setting static|dynamic
//   units N / timestamps P / feature_dim D / treatment_dim 1 / treatment_kind K
//   then per timestamp: TIMESTAMP p, FEATURES (N rows × D), EDGES m (m "u v" rows),
//   TREATMENTS (N), OUTCOMES (N); finally END.
// Truth:
//   ENTANGLE_TRUTH, format_version, units, timestamps, confounder_dim,
//   t_treated, t_baseline, then per timestamp: TIMESTAMP p, CONFOUNDERS,
//   POTENTIAL_OUTCOMES ("y(t0) y(t)" rows), EFFECTS; finally END.

namespace entangle::io {

inline constexpr int kFormatVersion = 1;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string fmt9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

namespace detail {

inline void write_row(std::ostream& os, const Eigen::RowVectorXd& r) {
  for (Eigen::Index j = 0; j < r.size(); ++j) os << (j ? " " : "") << fmt9(r(j));
  os << '\n';
}

inline void write_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) write_row(os, m.row(i));
}

inline void write_vector(std::ostream& os, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) os << fmt9(v(i)) << '\n';
}

inline std::ofstream open_out(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  return os;
}

/// Whitespace token reader with positional error messages.
class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), is_(path) {
    if (!is_) throw IoError("cannot open: " + path);
  }

  std::string token() {
    std::string t;
    if (!(is_ >> t)) fail("unexpected end of file");
    return t;
  }

  void expect(const std::string& want) {
    const std::string got = token();
    if (got != want) fail("expected '" + want + "', found '" + got + "'");
  }

  template <class T>
  T value() {
    const std::string t = token();
    std::istringstream ss(t);
    T v{};
    if (!(ss >> v) || !ss.eof()) fail("malformed value '" + t + "'");
    return v;
  }

  template <class T>
  T keyed(const std::string& key) {
    expect(key);
    return value<T>();
  }

  Eigen::MatrixXd matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = value<double>();
    return m;
  }

  Eigen::VectorXd vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = value<double>();
    return v;
  }

  [[noreturn]] void fail(const std::string& what) { throw IoError(path_ + ": " + what); }

 private:
  std::string path_;
  std::ifstream is_;
};

}  // namespace detail

inline void write_panel(const std::string& path, const PanelDataset& panel) {
  panel.validate();
  auto os = detail::open_out(path);
  const auto P = panel.timestamps();
  os << "ENTANGLE_PANEL\n"
     << "format_version " << kFormatVersion << '\n'
     << "setting " << (P == 1 ? "static" : "dynamic") << '\n'
     << "units " << panel.units() << '\n'
     << "timestamps " << P << '\n'
     << "feature_dim " << panel.feature_dim() << '\n'
     << "treatment_dim 1\n"
     << "treatment_kind " << to_string(panel.treatment_kind) << '\n';
  for (std::size_t p = 0; p < P; ++p) {
    os << "TIMESTAMP " << p << "\nFEATURES\n";
    detail::write_matrix(os, panel.features[p]);
    const auto& g = panel.graphs[p];
    os << "EDGES " << g.num_edges() << '\n';
    for (const auto& e : g.edges()) os << e.u << ' ' << e.v << '\n';
    os << "TREATMENTS\n";
    detail::write_vector(os, panel.treatments[p]);
    os << "OUTCOMES\n";
    detail::write_vector(os, panel.outcomes[p]);
  }
  os << "END\n";
  if (!os) throw IoError("failed writing: " + path);
}

inline PanelDataset read_panel(const std::string& path) {
  detail::Reader r(path);
  r.expect("ENTANGLE_PANEL");
  if (r.keyed<int>("format_version") != kFormatVersion) r.fail("unsupported format_version");
  const std::string setting = r.keyed<std::string>("setting");
  const auto N = r.keyed<std::size_t>("units");
  const auto P = r.keyed<std::size_t>("timestamps");
  const auto D = r.keyed<std::size_t>("feature_dim");
  if (r.keyed<std::size_t>("treatment_dim") != 1) r.fail("only treatment_dim 1 is supported");
  PanelDataset panel;
  try {
    panel.treatment_kind = parse_treatment_kind(r.keyed<std::string>("treatment_kind"));
  } catch (const std::invalid_argument& e) {
    r.fail(e.what());
  }
  if ((setting == "static") != (P == 1) || (setting != "static" && setting != "dynamic"))
    r.fail("setting '" + setting + "' inconsistent with " + std::to_string(P) + " timestamps");
  std::vector<GraphSnapshot> graphs;
  for (std::size_t p = 0; p < P; ++p) {
    if (r.keyed<std::size_t>("TIMESTAMP") != p) r.fail("timestamps out of order");
    r.expect("FEATURES");
    panel.features.push_back(r.matrix(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(D)));
    const auto m = r.keyed<std::size_t>("EDGES");
    std::vector<Edge> edges(m);
    for (auto& e : edges) {
      e.u = r.value<std::size_t>();
      e.v = r.value<std::size_t>();
    }
    try {
      graphs.emplace_back(N, std::move(edges));
    } catch (const std::invalid_argument& e) {
      r.fail(e.what());
    }
    r.expect("TREATMENTS");
    panel.treatments.push_back(r.vector(static_cast<Eigen::Index>(N)));
    r.expect("OUTCOMES");
    panel.outcomes.push_back(r.vector(static_cast<Eigen::Index>(N)));
  }
  r.expect("END");
  panel.graphs = DynamicGraph(std::move(graphs));
  try {
    panel.validate();
  } catch (const std::invalid_argument& e) {
    r.fail(e.what());
  }
  return panel;
}

inline void write_truth(const std::string& path, const GroundTruth& truth) {
  auto os = detail::open_out(path);
  const auto P = truth.effects.size();
  if (P == 0) throw std::invalid_argument("write_truth: empty ground truth");
  os << "ENTANGLE_TRUTH\n"
     << "format_version " << kFormatVersion << '\n'
     << "units " << truth.effects[0].size() << '\n'
     << "timestamps " << P << '\n'
     << "confounder_dim " << truth.confounders[0].cols() << '\n'
     << "t_treated " << fmt9(truth.t_treated) << '\n'
     << "t_baseline " << fmt9(truth.t_baseline) << '\n';
  for (std::size_t p = 0; p < P; ++p) {
    os << "TIMESTAMP " << p << "\nCONFOUNDERS\n";
    detail::write_matrix(os, truth.confounders[p]);
    os << "POTENTIAL_OUTCOMES\n";
    for (Eigen::Index i = 0; i < truth.effects[p].size(); ++i)
      os << fmt9(truth.y_baseline[p](i)) << ' ' << fmt9(truth.y_treated[p](i)) << '\n';
    os << "EFFECTS\n";
    detail::write_vector(os, truth.effects[p]);
  }
  os << "END\n";
  if (!os) throw IoError("failed writing: " + path);
}

/// Histories are simulator-internal and not stored.
inline GroundTruth read_truth(const std::string& path) {
  detail::Reader r(path);
  r.expect("ENTANGLE_TRUTH");
  if (r.keyed<int>("format_version") != kFormatVersion) r.fail("unsupported format_version");
  const auto N = static_cast<Eigen::Index>(r.keyed<std::size_t>("units"));
  const auto P = r.keyed<std::size_t>("timestamps");
  const auto du = static_cast<Eigen::Index>(r.keyed<std::size_t>("confounder_dim"));
  GroundTruth t;
  t.t_treated = r.keyed<double>("t_treated");
  t.t_baseline = r.keyed<double>("t_baseline");
  for (std::size_t p = 0; p < P; ++p) {
    if (r.keyed<std::size_t>("TIMESTAMP") != p) r.fail("timestamps out of order");
    r.expect("CONFOUNDERS");
    t.confounders.push_back(r.matrix(N, du));
    r.expect("POTENTIAL_OUTCOMES");
    const Eigen::MatrixXd po = r.matrix(N, 2);
    t.y_baseline.push_back(po.col(0));
    t.y_treated.push_back(po.col(1));
    r.expect("EFFECTS");
    t.effects.push_back(r.vector(N));
  }
  r.expect("END");
  return t;
}

inline void write_effects_csv(const std::string& path, const std::vector<Eigen::VectorXd>& tau_hat) {
  auto os = detail::open_out(path);
  os << "timestamp,unit,tau_hat\n";
  for (std::size_t p = 0; p < tau_hat.size(); ++p)
    for (Eigen::Index i = 0; i < tau_hat[p].size(); ++i) os << p << ',' << i << ',' << fmt9(tau_hat[p](i)) << '\n';
  if (!os) throw IoError("failed writing: " + path);
}

/// Appends rows under an exclusive advisory lock, writing `header` first when
/// the file is empty. Safe for concurrent grid-cell processes.
inline void append_locked(const std::string& path, const std::string& header,
                          const std::vector<std::string>& rows) {
  const auto parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw IoError("cannot open for appending: " + path);
  struct Closer {
    int fd;
    ~Closer() {
      ::flock(fd, LOCK_UN);
      ::close(fd);
    }
  } closer{fd};
  if (::flock(fd, LOCK_EX) != 0) throw IoError("cannot lock: " + path);
  std::string buf;
  if (::lseek(fd, 0, SEEK_END) == 0) buf += header + "\n";
  for (const auto& r : rows) buf += r + "\n";
  std::size_t done = 0;
  while (done < buf.size()) {
    const ssize_t w = ::write(fd, buf.data() + done, buf.size() - done);
    if (w <= 0) throw IoError("failed writing: " + path);
    done += static_cast<std::size_t>(w);
  }
}

}  // namespace entangle::io
