#include "dada/trainer.hpp"

namespace dada {

std::string level_name(AblationLevel level) {
    switch (level) {
        case AblationLevel::source_only: return "source_only";
        case AblationLevel::I: return "I";
        case AblationLevel::II: return "II";
        case AblationLevel::III: return "III";
        case AblationLevel::IV: return "IV";
    }
    throw std::logic_error("unknown ablation level");
}

AblationLevel parse_level(const std::string& name) {
    for (AblationLevel l : all_levels)
        if (level_name(l) == name) return l;
    throw ConfigError("unknown ablation level '" + name + "' (expected source_only, I, II, III or IV)");
}

LevelTerms LevelTerms::of(AblationLevel level) {
    const int rank = static_cast<int>(level);
    LevelTerms t;
    t.target_rows = rank >= 1;
    t.class_on_ci = rank >= 1;
    t.entropy = rank >= 1;
    t.domain = rank >= 2;
    t.mutual_information = rank >= 2;
    t.ring = rank >= 3;
    t.reconstruction = rank >= 4;
    return t;
}

void ExperimentConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError(what);
    };
    require(batch_size >= 2, "batch_size must be at least 2");
    require(epochs >= 1, "epochs must be at least 1");
    require(inner_iterations >= 1, "inner_iterations must be at least 1");
    require(optimizer.learning_rate >= 0 && std::isfinite(optimizer.learning_rate), "learning_rate must be >= 0");
    require(optimizer.beta1 >= 0 && optimizer.beta1 < 1, "beta1 must lie in [0, 1)");
    require(optimizer.beta2 >= 0 && optimizer.beta2 < 1, "beta2 must lie in [0, 1)");
    require(optimizer.epsilon > 0, "epsilon must be positive");
    require(optimizer.weight_decay >= 0, "weight_decay must be >= 0");
    require(optimizer.momentum >= 0 && optimizer.momentum < 1, "momentum must lie in [0, 1)");
    require(generator_lr_scale > 0 && statistic_lr_scale > 0, "learning-rate scales must be positive");
    for (double w : {weights.cross_entropy, weights.entropy, weights.domain, weights.mutual_information,
                     weights.reconstruction, weights.ring})
        require(w >= 0 && std::isfinite(w), "loss weights must be finite and >= 0");
    require(ring_beta > 0, "ring beta must be positive");
    require(ema_decay >= 0 && ema_decay <= 1, "ema_decay must lie in [0, 1]");
    require(statistic_warmup >= 0, "statistic_warmup must be >= 0");
    require(arch.num_classes >= 2, "num_classes must be at least 2");
    require(arch.feature_width >= 1, "feature_width must be positive");
}

bool LossReport::all_finite() const {
    for (double v : {cross_entropy, cross_entropy_ci, entropy, domain_identifier, fool, mutual_information, ring,
                     reconstruction, mi_di_ds, mi_di_ci, radius, source_accuracy})
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace dada
