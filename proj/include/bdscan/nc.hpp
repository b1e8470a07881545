#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bdscan/dataset.hpp"
#include "bdscan/kernels.hpp"
#include "bdscan/network.hpp"
#include "bdscan/tensor.hpp"

namespace bdscan {

enum class MaskNorm { l1, l2 };
// posterior: -mean p(t|x'); log_posterior: -mean log p(t|x').
enum class NCLoss { posterior, log_posterior };

struct NCConfig {
    double lambda = 1.5;
    double pi = 0.8;
    std::size_t max_iters = 600;
    MaskNorm mask_norm = MaskNorm::l1;
    NCLoss loss = NCLoss::log_posterior;
    double step = 0.1;            // Adam learning rate on the logits of mask and pattern
    double max_mask_norm = 90.0;  // optimization gives up once the mask grows past this
    double init_mask_logit = -3.0;

    void validate() const;
};

struct MaskPattern {
    Tensor pattern;  // H x W x C in [0, 1]
    Tensor mask;     // H x W x 1 in [0, 1]
};

struct NCResult {
    std::size_t target = 0;
    MaskPattern estimate;
    bool converged = false;
    bool bound_hit = false;
    double mask_norm = 0.0;
    double rho = 0.0;
    std::size_t iterations = 0;
};

// Reverse-engineers a (pattern, mask) that sends the images of every class
// except t to t.
NCResult nc_optimize(const Network& net, const Dataset& detection_set, std::size_t target, const NCConfig& cfg,
                     Exec exec = Exec::serial);

struct MadResult {
    std::vector<double> indices;
    double median = 0.0;
    double scale = 0.0;  // 1.4826 * MAD, or the fallback spread
    bool fallback = false;
};

// |x - median| / (1.4826 MAD). When MAD is zero the mean absolute deviation
// from the median stands in and `fallback` is set; when both vanish the
// norms are all equal and DegenerateData is thrown.
MadResult mad_index(std::span<const double> norms);

struct AnomalyReport {
    std::vector<double> norms;    // per class; NaN for discarded classes
    std::vector<double> indices;  // per class; NaN for discarded classes
    std::vector<std::size_t> discarded;
    double median = 0.0;
    bool fallback = false;
    std::optional<std::size_t> detected;
    std::size_t top_class = 0;  // largest small-side index, detected or not
    double top_index = 0.0;
    std::vector<std::string> diagnostics;
    std::vector<NCResult> results;
};

// Class with the largest small-side anomaly index above theta, if any.
std::optional<std::size_t> nc_decide(const AnomalyReport& report, double theta = 2.0);

AnomalyReport nc_detect(const Network& net, const Dataset& detection_set, const NCConfig& cfg, double theta = 2.0,
                        Exec exec = Exec::parallel);

}  // namespace bdscan
