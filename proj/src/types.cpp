#include "nienie/types.hpp"

namespace nienie {

std::string_view to_string(Label label) {
  switch (label) {
    case Label::baseline:
      return "baseline";
    case Label::stress:
      return "stress";
    case Label::amusement:
      return "amusement";
  }
  return "unknown";
}

std::string_view to_string(Channel channel) {
  switch (channel) {
    case Channel::eda:
      return "eda";
    case Channel::temp:
      return "temp";
    case Channel::hr:
      return "hr";
  }
  return "unknown";
}

std::optional<Label> parse_label(std::string_view text) {
  if (text == "baseline" || text == "0") return Label::baseline;
  if (text == "stress" || text == "1") return Label::stress;
  if (text == "amusement" || text == "2") return Label::amusement;
  return std::nullopt;
}

std::optional<Label> label_from_int(long long value) {
  if (value < 0 || value >= kNumClasses) return std::nullopt;
  return static_cast<Label>(value);
}

std::optional<Channel> parse_channel(std::string_view text) {
  if (text == "eda") return Channel::eda;
  if (text == "temp") return Channel::temp;
  if (text == "hr") return Channel::hr;
  return std::nullopt;
}

std::string_view default_units(Channel channel) {
  switch (channel) {
    case Channel::eda:
      return "µS";
    case Channel::temp:
      return "°C";
    case Channel::hr:
      return "bpm";
  }
  return "";
}

}  // namespace nienie
