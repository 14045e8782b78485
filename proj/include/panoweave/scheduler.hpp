#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "json.hpp"
#include "panoweave/canvas.hpp"
#include "panoweave/geometry.hpp"

namespace panoweave {

/// Ordered views realising the longitude-first traversal. Every view after
/// the first overlaps the union of the earlier footprints by at least
/// `min_overlap` of its own (solid-angle weighted) footprint, and the union
/// of all footprints covers every pixel of a `pano_width` equirect grid.
struct TraversalPlan {
    std::vector<ViewSpec> views;
    double stride_lon = 45.0;
    double stride_lat = 45.0;
    double min_overlap = 0.25;
    int pano_width = 0;

    bool operator==(const TraversalPlan&) const = default;
};

inline constexpr double kDefaultMinOverlap = 0.25;

/// Fraction of the view's footprint (solid-angle weighted) that is known.
double view_overlap(const ViewSpec& view, const Mask& known);

/// Sweeps the start latitude band east/west alternately until it closes,
/// then latitude bands alternately towards +90 and -90, then the two pole
/// views, then gap-filling views until coverage is complete. Candidates that
/// overlap too little get midpoint views inserted before them. Pathway views
/// stay in the plan even if earlier views already cover them.
TraversalPlan plan_traversal(const ViewSpec& start, int pano_width, double stride_lon,
                             double stride_lat, double min_overlap = kDefaultMinOverlap);

struct NextView {
    std::size_t index = 0;
    ViewSpec view;
};

/// First view at or after `cursor` that has both unknown pixels and enough
/// known overlap. std::nullopt once the panorama is complete.
std::optional<NextView> next_view(const TraversalPlan& plan, const Panorama& state,
                                  std::size_t cursor);

/// New plan starting at a user-chosen view. Throws SteeringError when the
/// view adds nothing or does not overlap the known region enough.
TraversalPlan replan_from(const Panorama& state, const ViewSpec& user_view,
                          const TraversalPlan& plan);

nlohmann::json to_json(const ViewSpec& view);
ViewSpec view_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TraversalPlan& plan);
TraversalPlan plan_from_json(const nlohmann::json& j);

}  // namespace panoweave
