#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace condu {

enum class errc {
  duplicate_name,
  length_mismatch,
  non_finite_value,
  io_error,
  bad_magic,
  unsupported_version,
  corrupt_section,
  wrong_kind,
  layout_mismatch,
  empty_input,
  unknown_task,
  empty_category,
  dim_mismatch,
  zero_vector,
  missing_prototypes,
  contract_violation,
  bad_config,
  non_finite_loss,
};

constexpr std::string_view errc_name(errc code) noexcept {
  switch (code) {
    case errc::duplicate_name: return "DuplicateName";
    case errc::length_mismatch: return "LengthMismatch";
    case errc::non_finite_value: return "NonFiniteValue";
    case errc::io_error: return "IoError";
    case errc::bad_magic: return "BadMagic";
    case errc::unsupported_version: return "UnsupportedVersion";
    case errc::corrupt_section: return "CorruptSection";
    case errc::wrong_kind: return "WrongKind";
    case errc::layout_mismatch: return "LayoutMismatch";
    case errc::empty_input: return "EmptyInput";
    case errc::unknown_task: return "UnknownTask";
    case errc::empty_category: return "EmptyCategory";
    case errc::dim_mismatch: return "DimMismatch";
    case errc::zero_vector: return "ZeroVector";
    case errc::missing_prototypes: return "MissingPrototypes";
    case errc::contract_violation: return "ContractViolation";
    case errc::bad_config: return "BadConfig";
    case errc::non_finite_loss: return "NonFiniteLoss";
  }
  return "Unknown";
}

/// Every domain failure in the library is reported as this exception; the
/// code identifies the contract that was broken.
class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  errc code() const noexcept { return code_; }
  std::string_view name() const noexcept { return errc_name(code_); }

 private:
  errc code_;
};

}  // namespace condu
