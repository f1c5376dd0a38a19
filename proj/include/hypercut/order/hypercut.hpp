#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hypercut/order/encoder.hpp"
#include "hypercut/scenes/dataset.hpp"

namespace hypercut::order {

using scenes::FrameSequence;
using SequenceList = std::vector<const FrameSequence*>;

/// Sequences of one dataset split.
SequenceList sequences(const scenes::Dataset& ds, scenes::Split which);
/// Every sequence of the dataset.
SequenceList sequences(const scenes::Dataset& ds);

/// Index pairs (k, N-k) for k < N/2. The middle frame of an odd-length
/// sequence pairs with itself and is left out.
std::vector<std::pair<int, int>> symmetric_pairs(int frame_count);

/// <H([a,b]),h> * <H([b,a]),h>; negative when the pair is separated.
double separation_product(PairEmbedder& embedder, const Image& a, const Image& b);

/// Loss graph over a batch of pairs: inputs "forward" = [a,b] and
/// "swapped" = [b,a], both [B, 2C, H, W]. Returns the mean softplus of the
/// product of the two projections. `h` enters as a constant.
template <typename T>
diff::Var build_hypercut_loss(diff::BasicGraph<T>& g, diff::BasicParameterSet<T>& params, const EncoderArch& arch,
                              const Hyperplane& h);

/// Mean softplus(product) over the given pairs.
double hypercut_loss(PairEmbedder& embedder, const std::vector<std::pair<const Image*, const Image*>>& pairs);

struct OrderTrainConfig {
  int epochs = 12;
  int batch = 32;
  double lr = 3e-4;
  std::uint64_t seed = 0;
  EncoderArch arch;
  /// Called after every epoch with (epoch, mean loss, train hit rate).
  std::function<void(int, double, double)> on_epoch;
};

struct OrderEpoch {
  int epoch = 0;
  double loss = 0.0;
  double train_hit = 0.0;
};

struct OrderTrainResult {
  OrderEncoder encoder;
  Hyperplane hyperplane;
  double initial_loss = 0.0;
  std::vector<OrderEpoch> log;
  /// Every training pair is palindromic (identical frames), so no pair can
  /// ever be separated.
  bool degenerate = false;
  std::vector<std::string> warnings;
};

/// Trains H on all symmetric pairs of `train`. h is drawn once from a child
/// seed and never updated. Throws on an empty dataset.
OrderTrainResult train_order_encoder(const SequenceList& train, const OrderTrainConfig& config);

struct OrderLabel {
  int value = 0;
  double margin = 0.0;
};

/// Majority vote over pair sides (1 when the positive side wins), ties broken
/// by the pair with the largest |projection|. Throws if every projection is 0.
OrderLabel label_from_projections(const std::vector<double>& projections);
OrderLabel order_label(PairEmbedder& embedder, const FrameSequence& seq);

/// Forward and swapped projections for every symmetric pair of every sequence.
struct PairProjections {
  std::vector<std::vector<double>> forward;
  std::vector<std::vector<double>> swapped;
};
PairProjections collect_projections(PairEmbedder& embedder, const SequenceList& seqs);

double hit_rate(const PairProjections& p);
double hit_rate(PairEmbedder& embedder, const SequenceList& seqs);

/// Exhaustive over all X-subsets of a sequence's pairs: fraction whose forward
/// projections share a side. Throws if a sequence has fewer than X pairs.
double con_rate(const std::vector<std::vector<double>>& forward, int x);
double con_rate(PairEmbedder& embedder, const SequenceList& seqs, int x);

struct EmbeddingPoint {
  double x = 0.0;
  double y = 0.0;
  int side = 0;  // sign of the projection onto h
  bool reversed = false;
};

/// Top-2 principal components of the forward and swapped pair embeddings.
/// Throws with fewer than 2 embeddings.
std::vector<EmbeddingPoint> project_embeddings_2d(const std::vector<std::vector<float>>& embeddings,
                                                  const Hyperplane& h, const std::vector<bool>& reversed);
std::vector<EmbeddingPoint> project_embeddings_2d(PairEmbedder& embedder, const SequenceList& seqs);

/// Training accuracy of a least-squares linear classifier predicting `side`
/// from (x, y).
double linear_separability(const std::vector<EmbeddingPoint>& points);

struct OrderReport {
  std::size_t sequences = 0;
  std::size_t pairs = 0;
  double hit = 0.0;
  double con2 = 0.0;
  double con3 = 0.0;
  /// Fraction of sequences whose label is unchanged under reversal.
  double label_unchanged = 0.0;

  std::string to_text() const;
};

OrderReport evaluate_order(PairEmbedder& embedder, const SequenceList& seqs);

}  // namespace hypercut::order
