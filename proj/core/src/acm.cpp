#include "acmseg/acm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace acmseg {

void AcmOptions::validate() const {
    if (max_iters < 1) throw std::invalid_argument("acm: max_iters must be >= 1");
    if (!(step_size > 0.0)) throw std::invalid_argument("acm: step_size must be > 0");
    if (L < 3) throw std::invalid_argument("acm: L must be >= 3");
    if (!(converge_tol >= 0.0)) throw std::invalid_argument("acm: converge_tol must be >= 0");
    if (!(balloon_h > 0.0)) throw std::invalid_argument("acm: balloon_h must be > 0");
    if (resample_every < 0) throw std::invalid_argument("acm: resample_every must be >= 0");
}

EnergyTerms energy_terms(const Polygon& poly, const PriorMaps& maps) {
    const auto d1 = first_diff(poly);
    const auto d2 = second_diff(poly);
    EnergyTerms e;
    for (std::size_t s = 0; s < poly.size(); ++s) {
        e.data += sample(maps.d(), poly[s]).value;
        e.membrane += sample(maps.alpha(), poly[s]).value * squared_norm(d1[s]);
        e.thin_plate += sample(maps.beta(), poly[s]).value * squared_norm(d2[s]);
    }
    e.balloon = region_sum(maps.kappa(), poly);
    return e;
}

double energy(const Polygon& poly, const PriorMaps& maps) { return energy_terms(poly, maps).total(); }

namespace {

// Change in the kappa sum when node p (between a and b) moves to q. Pixels
// whose parity flips are exactly those with an odd number of crossings among
// the two removed and two added edges. Those edges form the closed path
// a-p-b-q, so each row has an even number of crossings and the flipped pixels
// are the spans between consecutive pairs.
double move_delta(const Point& a, const Point& p, const Point& b, const Point& q, const Grid& kappa,
                  const Mask& inside) {
    const double min_v = std::min({a.v, p.v, b.v, q.v});
    const double max_v = std::max({a.v, p.v, b.v, q.v});
    const int v0 = std::max(0, static_cast<int>(std::ceil(std::max(min_v, -2.0))));
    const int v1 = std::min(kappa.height - 1, static_cast<int>(std::floor(std::min(max_v, kappa.height + 1.0))));
    const Point* edges[4][2] = {{&a, &p}, {&p, &b}, {&a, &q}, {&q, &b}};
    const double w = kappa.width;
    double delta = 0.0;
    for (int v = v0; v <= v1; ++v) {
        const double vy = v;
        double xs[4];
        int k = 0;
        for (const auto& e : edges) {
            const Point& s = *e[0];
            const Point& t = *e[1];
            if ((s.v > vy) != (t.v > vy)) xs[k++] = (t.u - s.u) * (vy - s.v) / (t.v - s.v) + s.u;
        }
        std::sort(xs, xs + k);
        for (int j = 0; j + 1 < k; j += 2) {
            const int ub = static_cast<int>(std::clamp(std::ceil(xs[j]), 0.0, w));
            const int ue = static_cast<int>(std::clamp(std::ceil(xs[j + 1]), 0.0, w));
            for (int u = ub; u < ue; ++u) delta += inside.at(u, v) ? -kappa(u, v) : kappa(u, v);
        }
    }
    return delta;
}

}  // namespace

std::vector<Point> balloon_grad(const Polygon& poly, const Grid& kappa, double h) {
    const std::size_t n = poly.size();
    std::vector<Point> g(n);
    const Mask inside = rasterize(poly, kappa.width, kappa.height);
    for (std::size_t s = 0; s < n; ++s) {
        const Point& a = poly[(s + n - 1) % n];
        const Point& p = poly[s];
        const Point& b = poly[(s + 1) % n];
        const double du = move_delta(a, p, b, p + Point{h, 0.0}, kappa, inside) -
                          move_delta(a, p, b, p - Point{h, 0.0}, kappa, inside);
        const double dv = move_delta(a, p, b, p + Point{0.0, h}, kappa, inside) -
                          move_delta(a, p, b, p - Point{0.0, h}, kappa, inside);
        g[s] = {du / (2.0 * h), dv / (2.0 * h)};
    }
    return g;
}

std::vector<Point> node_grad(const Polygon& poly, const PriorMaps& maps, double balloon_h) {
    const std::size_t n = poly.size();
    const auto d1 = first_diff(poly);
    const auto d2 = second_diff(poly);
    std::vector<Point> g = balloon_grad(poly, maps.kappa(), balloon_h);
    for (std::size_t s = 0; s < n; ++s) {
        const Sampled sd = sample(maps.d(), poly[s]);
        const Sampled sa = sample(maps.alpha(), poly[s]);
        const Sampled sb = sample(maps.beta(), poly[s]);
        g[s] += sd.grad + sa.grad * squared_norm(d1[s]) + sb.grad * squared_norm(d2[s]);

        const std::size_t next = (s + 1) % n;
        const std::size_t prev = (s + n - 1) % n;
        const Point m = 2.0 * sa.value * d1[s];
        g[next] += m;
        g[s] -= m;
        const Point t = 2.0 * sb.value * d2[s];
        g[next] += t;
        g[s] -= 2.0 * t;
        g[prev] += t;
    }
    return g;
}

EvolveResult evolve(const Polygon& init, const PriorMaps& maps, const AcmOptions& opts) {
    opts.validate();
    Polygon y = init;
    double e = energy(y, maps);
    EvolveResult res{init, {e}, 0, false};
    constexpr int kMaxHalvings = 8;

    std::vector<Point> trial(y.size());
    for (int it = 0; it < opts.max_iters; ++it) {
        const auto g = node_grad(y, maps, opts.balloon_h);
        double eta = opts.step_size;
        bool accepted = false;
        double e_new = e;
        std::vector<Point> next;
        for (int k = 0; k <= (opts.backtracking ? kMaxHalvings : 0); ++k) {
            next.assign(y.nodes().begin(), y.nodes().end());
            for (std::size_t s = 0; s < next.size(); ++s) next[s] -= eta * g[s];
            e_new = energy(Polygon(next), maps);
            if (!opts.backtracking || e_new <= e) {
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        res.iterations = it + 1;
        if (!accepted) {
            res.converged = true;
            break;
        }
        double disp = 0.0;
        for (std::size_t s = 0; s < next.size(); ++s) disp = std::max(disp, norm(next[s] - y[s]));
        y = Polygon(std::move(next));
        e = e_new;
        if (opts.resample_every > 0 && (it + 1) % opts.resample_every == 0 && perimeter(y) > 0.0) {
            y = resample(y, static_cast<int>(y.size()));
            e = energy(y, maps);
        }
        res.trace.push_back(e);
        if (disp < opts.converge_tol) {
            res.converged = true;
            break;
        }
    }
    res.final = std::move(y);
    return res;
}

std::vector<Polygon> init_polygons(int width, int height, double radius_frac, int L) {
    if (!(radius_frac > 0.0 && radius_frac <= 0.5)) {
        throw std::invalid_argument("init_polygons: radius_frac must be in (0, 0.5]");
    }
    const double r = radius_frac * std::min(width, height);
    const double w = width, h = height;
    const Point centers[5] = {
        {w / 4, h / 4}, {3 * w / 4, h / 4}, {w / 4, 3 * h / 4}, {3 * w / 4, 3 * h / 4}, {w / 2, h / 2}};
    std::vector<Polygon> out;
    out.reserve(5);
    for (const auto& c : centers) out.push_back(circle(c, r, L));
    return out;
}

std::vector<Candidate> infer_multi(const PriorMaps& maps, const AcmOptions& opts, double radius_frac) {
    const auto inits = init_polygons(maps.width(), maps.height(), radius_frac, opts.L);
    std::vector<Candidate> out;
    out.reserve(inits.size());
    for (const auto& init : inits) {
        auto r = evolve(init, maps, opts);
        out.push_back({std::move(r.final), r.trace.back(), r.iterations});
    }
    return out;
}

Selection select_best(std::span<const Polygon> results, const Mask& gt) {
    if (results.empty()) throw std::invalid_argument("select_best: no candidates");
    Selection best{0, -1.0};
    for (std::size_t i = 0; i < results.size(); ++i) {
        const double v = iou(rasterize(results[i], gt.width, gt.height), gt);
        if (v > best.iou) best = {i, v};
    }
    return best;
}

Selection select_best(std::span<const Candidate> results, const Mask& gt) {
    std::vector<Polygon> polys;
    polys.reserve(results.size());
    for (const auto& c : results) polys.push_back(c.poly);
    return select_best(polys, gt);
}

std::size_t select_best_unsupervised(std::span<const Candidate> results) {
    if (results.empty()) throw std::invalid_argument("select_best_unsupervised: no candidates");
    std::size_t best = 0;
    for (std::size_t i = 1; i < results.size(); ++i) {
        if (results[i].energy < results[best].energy) best = i;
    }
    return best;
}

void write_trace_csv(const std::string& path, std::span<const double> trace) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "iter,energy\n";
    os.precision(17);
    for (std::size_t i = 0; i < trace.size(); ++i) os << i << ',' << trace[i] << '\n';
}

}  // namespace acmseg
