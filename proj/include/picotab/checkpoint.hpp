#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "picotab/tensor.hpp"

namespace picotab {

// Versioned persistence container: magic "TPFN", a key=value text header,
// a tensor index, and a payload of little-endian float32 tensors. Tensor
// and header order are preserved, so save -> load -> save is bit-identical.
class CheckpointContainer {
  public:
    static constexpr uint32_t kFormatVersion = (1u << 16) | 0u;  // major 1, minor 0

    void set_header(const std::string& key, const std::string& value);
    bool has_header(const std::string& key) const;
    const std::string& header_value(const std::string& key) const;
    std::string header_or(const std::string& key, const std::string& fallback) const;

    void set_tensor(const std::string& name, Tensor t);
    bool has_tensor(const std::string& name) const;
    const Tensor& tensor(const std::string& name) const;

    const std::vector<std::pair<std::string, std::string>>& header_entries() const {
        return header_;
    }
    const std::vector<std::pair<std::string, Tensor>>& tensor_entries() const { return tensors_; }

  private:
    std::vector<std::pair<std::string, std::string>> header_;
    std::vector<std::pair<std::string, Tensor>> tensors_;
};

void save_checkpoint(const CheckpointContainer& container, const std::string& path);
CheckpointContainer load_checkpoint(const std::string& path);

// Rounds every element through float32. Training state passes through this
// at checkpoint cadence in deterministic mode so a resumed run continues
// from exactly the persisted values.
void quantize_to_f32(Tensor& t);

}  // namespace picotab
