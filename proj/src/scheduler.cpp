#include "panoweave/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "panoweave/error.hpp"

namespace panoweave {
namespace {

constexpr int kMaxMidpointDepth = 12;
constexpr std::size_t kMaxPlanLength = 4096;

std::vector<double> row_weights(int height)
{
    std::vector<double> w(static_cast<std::size_t>(height));
    for (int v = 0; v < height; ++v)
        w[static_cast<std::size_t>(v)] =
            std::cos((90.0 - (v + 0.5) / height * 180.0) * kDegToRad);
    return w;
}

double vertical_fov(const ViewSpec& v) { return 2.0 * std::atan(v.tan_half_v()) * kRadToDeg; }

ViewSpec at(const ViewSpec& tmpl, double lon, double lat)
{
    ViewSpec v = tmpl;
    v.center = SphereCoord::normalized(lon, lat);
    return v;
}

ViewSpec midpoint(const ViewSpec& a, const ViewSpec& b)
{
    const double dlon = wrap_longitude(b.center.lon - a.center.lon);
    return at(a, a.center.lon + dlon / 2.0, (a.center.lat + b.center.lat) / 2.0);
}

double angular_distance(const SphereCoord& a, const SphereCoord& b)
{
    const Vec3 p = direction_of(a);
    const Vec3 q = direction_of(b);
    const double d = std::clamp(p.x * q.x + p.y * q.y + p.z * q.z, -1.0, 1.0);
    return std::acos(d);
}

// Union of admitted footprints plus the planner's admission rule.
class CoverageBuilder {
public:
    CoverageBuilder(int pano_width, double min_overlap, Mask prior)
        : pano_width_(pano_width),
          min_overlap_(min_overlap),
          covered_(std::move(prior)),
          weights_(row_weights(pano_width / 2))
    {
    }

    [[nodiscard]] bool complete() const { return covered_.all_known(); }
    [[nodiscard]] const Mask& covered() const { return covered_; }
    [[nodiscard]] const std::vector<ViewSpec>& views() const { return views_; }
    std::vector<ViewSpec> take() { return std::move(views_); }

    [[nodiscard]] bool adds_pixels(const Mask& fp) const
    {
        for (std::size_t i = 0; i < fp.data.size(); ++i)
            if (fp.data[i] && !covered_.data[i]) return true;
        return false;
    }

    [[nodiscard]] double overlap(const Mask& fp) const
    {
        double both = 0.0;
        double area = 0.0;
        for (int v = 0; v < fp.height; ++v) {
            std::size_t in = 0;
            std::size_t shared = 0;
            for (int u = 0; u < fp.width; ++u) {
                if (!fp.known(u, v)) continue;
                ++in;
                if (covered_.known(u, v)) ++shared;
            }
            both += weights_[static_cast<std::size_t>(v)] * static_cast<double>(shared);
            area += weights_[static_cast<std::size_t>(v)] * static_cast<double>(in);
        }
        return area > 0.0 ? both / area : 0.0;
    }

    void push(const ViewSpec& view, const Mask& fp)
    {
        if (views_.size() >= kMaxPlanLength) throw PlanningError("plan grew beyond limit");
        views_.push_back(view);
        for (std::size_t i = 0; i < fp.data.size(); ++i)
            if (fp.data[i]) covered_.data[i] = 1;
    }

    /// Adds `cand`, inserting midpoints towards `anchor` while its overlap
    /// with the current coverage is below the minimum. Pathway views are kept
    /// even when already covered (next_view skips them at run time); inserted
    /// midpoints and gap fillers are dropped when redundant.
    void admit(const ViewSpec& cand, const ViewSpec& anchor, bool pathway = false,
               int depth = 0)
    {
        const Mask fp = view_footprint(cand, pano_width_);
        if (!adds_pixels(fp)) {
            if (pathway) push(cand, fp);
            return;
        }
        if (overlap(fp) >= min_overlap_) {
            push(cand, fp);
            return;
        }
        if (depth >= kMaxMidpointDepth)
            throw PlanningError("cannot reach the minimum overlap for view at lon " +
                                std::to_string(cand.center.lon) + ", lat " +
                                std::to_string(cand.center.lat));
        const ViewSpec mid = midpoint(anchor, cand);
        admit(mid, anchor, false, depth + 1);
        admit(cand, mid, pathway, depth + 1);
    }

    /// Nearest admitted view (by centre angle) to `c`.
    [[nodiscard]] ViewSpec nearest(const SphereCoord& c) const
    {
        const ViewSpec* best = &views_.front();
        double best_d = std::numeric_limits<double>::infinity();
        for (const ViewSpec& v : views_) {
            const double d = angular_distance(v.center, c);
            if (d < best_d) {
                best_d = d;
                best = &v;
            }
        }
        return *best;
    }

    /// Appends views centred on uncovered pixels (closest to `ref` latitude
    /// first, then closest in longitude) until the sphere is covered.
    void fill_gaps(const ViewSpec& tmpl, const SphereCoord& ref)
    {
        const int w = covered_.width;
        const int h = covered_.height;
        while (!complete()) {
            int best_u = -1;
            int best_v = -1;
            double best_key_lat = std::numeric_limits<double>::infinity();
            double best_key_lon = std::numeric_limits<double>::infinity();
            for (int v = 0; v < h; ++v) {
                const double lat = 90.0 - (v + 0.5) / h * 180.0;
                const double klat = std::abs(lat - ref.lat);
                if (klat > best_key_lat) continue;
                for (int u = 0; u < w; ++u) {
                    if (covered_.known(u, v)) continue;
                    // Centres snap to column edges so they stay on the yaw grid.
                    const double lon = static_cast<double>(u) / w * 360.0 - 180.0;
                    const double klon = std::abs(wrap_longitude(lon - ref.lon));
                    if (klat < best_key_lat || klon < best_key_lon) {
                        best_key_lat = klat;
                        best_key_lon = klon;
                        best_u = u;
                        best_v = v;
                    }
                }
            }
            const double lon = static_cast<double>(best_u) / w * 360.0 - 180.0;
            const double lat = 90.0 - (best_v + 0.5) / h * 180.0;
            const ViewSpec cand = at(tmpl, lon, lat);
            const std::size_t before = views_.size();
            admit(cand, nearest(cand.center));
            if (views_.size() == before)
                throw PlanningError("gap filling made no progress");
        }
    }

private:
    int pano_width_;
    double min_overlap_;
    Mask covered_;
    std::vector<double> weights_;
    std::vector<ViewSpec> views_;
};

// Alternating east/west offsets +s, -s, +2s, -2s, ... (count of them).
std::vector<double> sweep_offsets(double stride, std::size_t count)
{
    std::vector<double> out;
    out.reserve(count);
    for (std::size_t j = 1; out.size() < count; ++j) {
        out.push_back(static_cast<double>(j) * stride);
        if (out.size() < count) out.push_back(-static_cast<double>(j) * stride);
    }
    return out;
}

void validate_plan_args(const ViewSpec& start, int pano_width, double stride_lon,
                        double stride_lat, double min_overlap)
{
    start.validate();
    if (pano_width < 8 || pano_width % 2 != 0)
        throw PlanningError("panorama width must be even and >= 8");
    if (!(stride_lon > 0.0) || !(stride_lat > 0.0))
        throw PlanningError("strides must be positive");
    if (stride_lon >= start.fov_deg)
        throw PlanningError("longitude stride must be below the view fov");
    if (stride_lat >= vertical_fov(start))
        throw PlanningError("latitude stride must be below the vertical view fov");
    if (!(min_overlap > 0.0) || min_overlap > 0.9)
        throw PlanningError("min_overlap must lie in (0, 0.9]");
}

void sweep_band(CoverageBuilder& cov, const ViewSpec& band_start, double stride,
                std::size_t per_band)
{
    ViewSpec east = band_start;
    ViewSpec west = band_start;
    for (double off : sweep_offsets(stride, per_band - 1)) {
        const ViewSpec cand =
            at(band_start, band_start.center.lon + off, band_start.center.lat);
        if (off > 0) {
            cov.admit(cand, east, true);
            east = cand;
        } else {
            cov.admit(cand, west, true);
            west = cand;
        }
    }
}

}  // namespace

double view_overlap(const ViewSpec& view, const Mask& known)
{
    const Mask fp = view_footprint(view, known.width);
    if (fp.width != known.width || fp.height != known.height)
        throw DimensionError("view_overlap: mask is not an equirect grid");
    return CoverageBuilder(known.width, 1.0, known).overlap(fp);
}

TraversalPlan plan_traversal(const ViewSpec& start, int pano_width, double stride_lon,
                             double stride_lat, double min_overlap)
{
    validate_plan_args(start, pano_width, stride_lon, stride_lat, min_overlap);
    const ViewSpec origin = at(start, start.center.lon, start.center.lat);

    CoverageBuilder cov(pano_width, min_overlap, Mask(pano_width, pano_width / 2));
    cov.push(origin, view_footprint(origin, pano_width));

    const auto per_band =
        static_cast<std::size_t>(std::ceil(360.0 / stride_lon - 1e-9));
    sweep_band(cov, origin, stride_lon, per_band);

    // Latitude bands, alternating towards +90 and -90.
    std::vector<double> up;
    std::vector<double> down;
    for (int i = 1;; ++i) {
        const double lat = origin.center.lat + i * stride_lat;
        if (lat >= 90.0) break;
        up.push_back(lat);
    }
    for (int i = 1;; ++i) {
        const double lat = origin.center.lat - i * stride_lat;
        if (lat <= -90.0) break;
        down.push_back(lat);
    }
    ViewSpec up_anchor = origin;
    ViewSpec down_anchor = origin;
    for (std::size_t i = 0; i < std::max(up.size(), down.size()); ++i) {
        if (i < up.size()) {
            const ViewSpec band = at(origin, origin.center.lon, up[i]);
            cov.admit(band, up_anchor, true);
            sweep_band(cov, band, stride_lon, per_band);
            up_anchor = band;
        }
        if (i < down.size()) {
            const ViewSpec band = at(origin, origin.center.lon, down[i]);
            cov.admit(band, down_anchor, true);
            sweep_band(cov, band, stride_lon, per_band);
            down_anchor = band;
        }
    }

    cov.admit(at(origin, origin.center.lon, 90.0), up_anchor, true);
    cov.admit(at(origin, origin.center.lon, -90.0), down_anchor, true);
    cov.fill_gaps(origin, origin.center);

    TraversalPlan plan;
    plan.views = cov.take();
    plan.stride_lon = stride_lon;
    plan.stride_lat = stride_lat;
    plan.min_overlap = min_overlap;
    plan.pano_width = pano_width;
    return plan;
}

std::optional<NextView> next_view(const TraversalPlan& plan, const Panorama& state,
                                  std::size_t cursor)
{
    if (state.complete()) return std::nullopt;
    if (state.width() != plan.pano_width)
        throw SchedulingError("plan and panorama widths differ");
    CoverageBuilder known(state.width(), plan.min_overlap, state.mask());
    for (std::size_t i = cursor; i < plan.views.size(); ++i) {
        const Mask fp = view_footprint(plan.views[i], state.width());
        if (!known.adds_pixels(fp)) continue;
        if (known.overlap(fp) >= plan.min_overlap) return NextView{i, plan.views[i]};
    }
    throw SchedulingError("no planned view at or after the cursor can extend the panorama");
}

TraversalPlan replan_from(const Panorama& state, const ViewSpec& user_view,
                          const TraversalPlan& plan)
{
    user_view.validate();
    if (user_view.width != plan.views.front().width ||
        user_view.height != plan.views.front().height)
        throw SteeringError("steered view must keep the run's view raster size");
    if (state.width() != plan.pano_width)
        throw SchedulingError("plan and panorama widths differ");

    const ViewSpec first = at(user_view, user_view.center.lon, user_view.center.lat);
    CoverageBuilder cov(plan.pano_width, plan.min_overlap, state.mask());
    const Mask fp = view_footprint(first, plan.pano_width);
    if (!cov.adds_pixels(fp))
        throw SteeringError("steered view lies entirely inside the known region");
    if (cov.overlap(fp) < plan.min_overlap)
        throw SteeringError("steered view overlaps the known region too little; pick a view "
                            "closer to the known frontier");
    cov.push(first, fp);

    std::vector<ViewSpec> pending;
    for (const ViewSpec& v : plan.views)
        if (!(v == first)) pending.push_back(v);

    while (!pending.empty()) {
        bool progressed = false;
        for (std::size_t i = 0; i < pending.size(); ++i) {
            const Mask vfp = view_footprint(pending[i], plan.pano_width);
            if (!cov.adds_pixels(vfp)) {
                pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(i));
                progressed = true;
                break;
            }
            if (cov.overlap(vfp) >= plan.min_overlap) {
                cov.push(pending[i], vfp);
                pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(i));
                progressed = true;
                break;
            }
        }
        if (!progressed) {
            const ViewSpec cand = pending.front();
            pending.erase(pending.begin());
            cov.admit(cand, cov.nearest(cand.center));
        }
    }
    cov.fill_gaps(first, first.center);

    TraversalPlan out = plan;
    out.views = cov.take();
    return out;
}

nlohmann::json to_json(const ViewSpec& view)
{
    return {{"lon", view.center.lon},
            {"lat", view.center.lat},
            {"fov", view.fov_deg},
            {"width", view.width},
            {"height", view.height}};
}

ViewSpec view_from_json(const nlohmann::json& j)
{
    ViewSpec v;
    v.center = SphereCoord::normalized(j.at("lon").get<double>(), j.at("lat").get<double>());
    v.fov_deg = j.at("fov").get<double>();
    v.width = j.at("width").get<int>();
    v.height = j.at("height").get<int>();
    return v;
}

nlohmann::json to_json(const TraversalPlan& plan)
{
    nlohmann::json views = nlohmann::json::array();
    for (const ViewSpec& v : plan.views) views.push_back(to_json(v));
    return {{"stride_lon", plan.stride_lon},
            {"stride_lat", plan.stride_lat},
            {"min_overlap", plan.min_overlap},
            {"pano_width", plan.pano_width},
            {"views", std::move(views)}};
}

TraversalPlan plan_from_json(const nlohmann::json& j)
{
    TraversalPlan plan;
    plan.stride_lon = j.at("stride_lon").get<double>();
    plan.stride_lat = j.at("stride_lat").get<double>();
    plan.min_overlap = j.at("min_overlap").get<double>();
    plan.pano_width = j.at("pano_width").get<int>();
    for (const auto& v : j.at("views")) plan.views.push_back(view_from_json(v));
    if (plan.views.empty()) throw ConfigError("plan has no views");
    return plan;
}

}  // namespace panoweave
