#include "gtea/training.hpp"

namespace gtea::training {

Metrics compute_metrics(const std::vector<int>& truth, const std::vector<int>& predicted,
                        int num_classes) {
    if (truth.size() != predicted.size()) {
        throw ShapeError("compute_metrics: " + std::to_string(truth.size()) + " labels vs " +
                         std::to_string(predicted.size()) + " predictions");
    }
    if (truth.empty()) throw DataError("compute_metrics: empty input");
    const std::size_t c = static_cast<std::size_t>(num_classes);
    Metrics m;
    m.confusion.assign(c, std::vector<std::size_t>(c, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = truth[i], p = predicted[i];
        if (t < 0 || t >= num_classes || p < 0 || p >= num_classes) {
            throw DataError("compute_metrics: class outside [0, " +
                            std::to_string(num_classes) + ")");
        }
        ++m.confusion[t][p];
    }
    std::size_t correct = 0;
    for (std::size_t k = 0; k < c; ++k) correct += m.confusion[k][k];
    m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());

    m.precision.assign(c, 0.0);
    m.recall.assign(c, 0.0);
    m.f1.assign(c, 0.0);
    double f1_sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        std::size_t tp = m.confusion[k][k], fp = 0, fn = 0;
        for (std::size_t j = 0; j < c; ++j) {
            if (j != k) {
                fp += m.confusion[j][k];
                fn += m.confusion[k][j];
            }
        }
        // 0/0 counts as 0 throughout
        m.precision[k] = tp + fp == 0 ? 0.0
                                      : static_cast<double>(tp) / static_cast<double>(tp + fp);
        m.recall[k] = tp + fn == 0 ? 0.0
                                   : static_cast<double>(tp) / static_cast<double>(tp + fn);
        m.f1[k] = m.precision[k] + m.recall[k] == 0.0
                      ? 0.0
                      : 2.0 * m.precision[k] * m.recall[k] / (m.precision[k] + m.recall[k]);
        f1_sum += m.f1[k];
    }
    m.macro_f1 = f1_sum / static_cast<double>(c);
    return m;
}

}  // namespace gtea::training
