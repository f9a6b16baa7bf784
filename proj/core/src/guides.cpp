// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include "vertenet/guides.hpp"

#include <algorithm>
#include <stdexcept>

namespace vertenet {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool segments_properly_intersect(const Point& a, const Point& b,
                                 const Point& c, const Point& d) {
  const double d1 = cross(c, d, a);
  const double d2 = cross(c, d, b);
  const double d3 = cross(a, b, c);
  const double d4 = cross(a, b, d);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
         ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

}  // namespace

const char* orientation_name(Orientation o) {
  return o == Orientation::AnteriorRight ? "anterior-right" : "anterior-left";
}

Orientation orientation_from_name(const std::string& name) {
  if (name == "anterior-right") return Orientation::AnteriorRight;
  if (name == "anterior-left") return Orientation::AnteriorLeft;
  throw std::invalid_argument("unknown orientation '" + name + "'");
}

std::array<Point, 4> classify_corners(const std::array<Point, 4>& quad,
                                      Orientation orientation) {
  std::array<int, 4> idx{0, 1, 2, 3};
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (quad[a].y != quad[b].y) return quad[a].y < quad[b].y;
    return quad[a].x < quad[b].x;
  });

  const bool anterior_is_max_x = orientation == Orientation::AnteriorRight;
  auto split_pair = [&](int ia, int ib, Point& anterior, Point& posterior) {
    const Point& a = quad[ia];
    const Point& b = quad[ib];
    const bool a_anterior = anterior_is_max_x ? a.x >= b.x : a.x <= b.x;
    anterior = a_anterior ? a : b;
    posterior = a_anterior ? b : a;
  };

  std::array<Point, 4> labeled;
  split_pair(idx[0], idx[1], labeled[static_cast<int>(CornerId::AnteriorSuperior)],
             labeled[static_cast<int>(CornerId::PosteriorSuperior)]);
  split_pair(idx[2], idx[3], labeled[static_cast<int>(CornerId::AnteriorInferior)],
             labeled[static_cast<int>(CornerId::PosteriorInferior)]);

  // The labeled cycle AS -> PS -> PI -> AI must be simple.
  const Point& as = labeled[static_cast<int>(CornerId::AnteriorSuperior)];
  const Point& ps = labeled[static_cast<int>(CornerId::PosteriorSuperior)];
  const Point& pi = labeled[static_cast<int>(CornerId::PosteriorInferior)];
  const Point& ai = labeled[static_cast<int>(CornerId::AnteriorInferior)];
  require(!segments_properly_intersect(as, ps, pi, ai) &&
              !segments_properly_intersect(ps, pi, ai, as),
          "classify_corners: the four points form a self-intersecting quad");
  return labeled;
}

double mean_vertebral_width(const LandmarkSet& landmarks) {
  require(!landmarks.vertebrae.empty(),
          "mean_vertebral_width: empty landmark set");
  double total = 0.0;
  for (const Vertebra& v : landmarks.vertebrae) {
    const Point anterior_mid = midpoint(v.corner(CornerId::AnteriorSuperior),
                                        v.corner(CornerId::AnteriorInferior));
    const Point posterior_mid = midpoint(v.corner(CornerId::PosteriorSuperior),
                                         v.corner(CornerId::PosteriorInferior));
    total += distance(anterior_mid, posterior_mid);
  }
  return total / landmarks.vertebrae.size();
}

GuideSet generate_ivgs(const LandmarkSet& landmarks, Orientation orientation) {
  const auto& vs = landmarks.vertebrae;
  require(!vs.empty(), "generate_ivgs: empty landmark set");

  GuideSet g;
  g.orientation = orientation;
  for (std::size_t i = 0; i + 1 < vs.size(); ++i) {
    Guide guide;
    guide.kind = GuideKind::Inter;
    guide.index = static_cast<int>(i);
    guide.anterior = midpoint(vs[i].corner(CornerId::AnteriorInferior),
                              vs[i + 1].corner(CornerId::AnteriorSuperior));
    guide.posterior = midpoint(vs[i].corner(CornerId::PosteriorInferior),
                               vs[i + 1].corner(CornerId::PosteriorSuperior));
    g.inter.push_back(guide);
  }
  for (std::size_t j = 0; j < vs.size(); ++j) {
    Guide guide;
    guide.kind = GuideKind::Intra;
    guide.index = static_cast<int>(j);
    guide.anterior = midpoint(vs[j].corner(CornerId::AnteriorSuperior),
                              vs[j].corner(CornerId::AnteriorInferior));
    guide.posterior = midpoint(vs[j].corner(CornerId::PosteriorSuperior),
                               vs[j].corner(CornerId::PosteriorInferior));
    g.intra.push_back(guide);
  }

  g.anterior_chain.reserve(g.inter.size() + g.intra.size());
  g.anterior_chain.insert(g.anterior_chain.end(), g.inter.begin(),
                          g.inter.end());
  g.anterior_chain.insert(g.anterior_chain.end(), g.intra.begin(),
                          g.intra.end());
  std::sort(g.anterior_chain.begin(), g.anterior_chain.end(),
            [](const Guide& a, const Guide& b) {
              return a.anterior.y < b.anterior.y;
            });
  return g;
}

}  // namespace vertenet
