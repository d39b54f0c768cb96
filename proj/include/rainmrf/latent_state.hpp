#pragma once

#include "rainmrf/common.hpp"

namespace rainmrf {

// Assignment of every latent variable of the field.
struct LatentState {
  StateMatrix z;  // S x T, entries in {kHigh, kLow}
  Labels u;       // length T, day-cluster labels
  Labels v;       // length S, location-cluster labels

  int num_day_clusters() const { return max_label(u); }
  int num_location_clusters() const { return max_label(v); }

  void validate(Eigen::Index num_locations, Eigen::Index num_days) const {
    if (z.rows() != num_locations || z.cols() != num_days)
      throw ValidationError("latent state Z has wrong shape");
    if (static_cast<Eigen::Index>(u.size()) != num_days ||
        static_cast<Eigen::Index>(v.size()) != num_locations)
      throw ValidationError("latent state label vectors have wrong length");
    for (Eigen::Index i = 0; i < z.size(); ++i)
      if (z.data()[i] != kHigh && z.data()[i] != kLow)
        throw ValidationError("latent state Z entry outside {1,2}");
    if (!is_dense(u)) throw ValidationError("day-cluster labels are not dense");
    if (!is_dense(v)) throw ValidationError("location-cluster labels are not dense");
  }

  friend bool operator==(const LatentState& a, const LatentState& b) {
    return a.u == b.u && a.v == b.v && a.z.rows() == b.z.rows() && a.z.cols() == b.z.cols() &&
           a.z == b.z;
  }
};

}  // namespace rainmrf
