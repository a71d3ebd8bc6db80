#pragma once

#include <array>
#include <stdexcept>
#include <string>

#include "morerec/prompts.hpp"

namespace morerec {

/// The three reflection perspectives. The integer codes double as bandit arms.
enum class Perspective : int { EP = 0, IP = 1, CF = 2 };

inline constexpr std::array<Perspective, 3> kAllPerspectives = {Perspective::EP, Perspective::IP,
                                                                Perspective::CF};

inline const char* perspective_name(Perspective p) {
    switch (p) {
        case Perspective::EP: return "EP";
        case Perspective::IP: return "IP";
        case Perspective::CF: return "CF";
    }
    return "?";
}

inline Perspective perspective_from_name(const std::string& s) {
    if (s == "EP") return Perspective::EP;
    if (s == "IP") return Perspective::IP;
    if (s == "CF") return Perspective::CF;
    throw std::invalid_argument("unknown perspective: " + s);
}

inline Perspective perspective_from_code(int code) {
    if (code < 0 || code > 2) throw std::invalid_argument("perspective code out of range");
    return static_cast<Perspective>(code);
}

inline int perspective_code(Perspective p) { return static_cast<int>(p); }

inline TemplateId template_for(Perspective p) {
    switch (p) {
        case Perspective::EP: return TemplateId::Ep;
        case Perspective::IP: return TemplateId::Ip;
        case Perspective::CF: return TemplateId::Cf;
    }
    return TemplateId::Ep;
}

}  // namespace morerec
