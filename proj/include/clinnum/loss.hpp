#pragma once

#include <optional>
#include <vector>

#include "clinnum/autodiff.hpp"
#include "clinnum/tensor.hpp"

namespace clinnum::loss {

// Per-batch objective record, also the schema of the per-step loss log.
struct LossBreakdown {
    double l1 = 0.0;        // MLM cross entropy
    double l2 = 0.0;        // number prediction squared error
    double l_tilde2 = 0.0;  // log-scaled squared error
    double combined = 0.0;
    double sigma1 = 1.0, sigma2 = 1.0;
    double w1 = 0.5, w2 = 0.5;

    bool finite() const;
};

// Mean negative log-softmax of the true token over the given rows.
// `weights`, when non-empty, is a per-row weight (used by classification
// fine-tuning with class weights); the weighted mean normalizes by the
// weight sum. Throws on zero rows.
Var mlm_loss(Tape& tape, Var logits, const std::vector<int>& targets, const std::vector<double>& weights = {});

// Mean squared error over masked positions.
Var number_loss_mse(Tape& tape, Var preds, const std::vector<double>& y2);

// Mean of (log(y2+1) - log(f2+1))^2; requires every prediction > -1.
Var number_loss_logscaled(Tape& tape, Var preds, const std::vector<double>& y2);

// 0.5*L1 + 0.5*Ltilde2 (fixed equal weighting after dropping the
// regularizers).
Var combined_fixed(Tape& tape, Var l1, Var l_tilde2);
double combined_fixed(double l1, double l_tilde2);

// (1/sigma1^2) L1 + (1/(2 sigma2^2)) L2 + log sigma1 + log sigma2, with the
// sigmas parameterized in log space on the tape.
Var combined_uncertainty(Tape& tape, Var l1, Var l2, Var log_sigma1, Var log_sigma2);
double combined_uncertainty(double l1, double l2, double sigma1, double sigma2);  // throws on sigma <= 0

// |d Ltilde2 / d L2| through the prediction:
// | log((f2+1)/(y2+1)) / ((f2+1)(f2-y2)) |.
// Degenerate at f2 == y2 (returns nullopt rather than dividing by zero).
std::optional<double> grad_ratio(double f2, double y2);

}  // namespace clinnum::loss
