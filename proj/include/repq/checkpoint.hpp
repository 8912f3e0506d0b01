#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "repq/block.hpp"
#include "repq/fusion.hpp"
#include "repq/ptq.hpp"

namespace repq {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "RQCK" | version u32 | mode u8 | config echo | tensor table | optimizer
// table (optional). All integers little-endian; save -> load -> save is
// byte-identical; writes go through a temp file + rename.
struct TensorEntry {
    std::string name;
    std::uint8_t dtype = 0; // 0 = f32, 1 = f64
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> raw;

    std::size_t elem_count() const;
    static TensorEntry f32(std::string name, const std::vector<std::uint32_t>& dims, const float* data);
    static TensorEntry f64(std::string name, const std::vector<std::uint32_t>& dims, const double* data);
    std::vector<float> as_f32() const;
    std::vector<double> as_f64() const;
};

struct Checkpoint {
    enum class Mode : std::uint8_t { train = 0, deploy = 1 };

    std::uint32_t version = kCheckpointVersion;
    Mode mode = Mode::train;
    std::string config_echo; // canonical RunConfig text
    std::vector<TensorEntry> tensors;
    bool has_optimizer = false;
    std::vector<TensorEntry> optimizer;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
    const TensorEntry* find(const std::string& name) const;
    const TensorEntry& require(const std::string& name) const;
};

Checkpoint checkpoint_from_network(const Network& net, const std::string& config_echo);
Checkpoint checkpoint_from_deploy(const DeployNetwork& net, const std::string& config_echo,
                                  const NetQuantParams* qp = nullptr);

// Rejects deploy checkpoints: deploy weights cannot re-enter training form.
Network network_from_checkpoint(const Checkpoint& ck);
DeployNetwork deploy_from_checkpoint(const Checkpoint& ck);
std::optional<NetQuantParams> quant_from_checkpoint(const Checkpoint& ck);

} // namespace repq
