#pragma once

#include <vector>

namespace mkv {

//! Step points from s to t_end. Every mandatory time inside (s, t_end) is hit
//! exactly and each gap is split evenly into steps no longer than dt.
std::vector<double> time_grid(double s, double t_end, double dt, const std::vector<double>& mandatory = {});

//! a == b up to 1e-12 relative.
bool same_time(double a, double b);

} // namespace mkv
