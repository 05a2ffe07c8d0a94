#include "ofakd/error.hpp"

namespace ofakd {

void throw_io(const std::string& what, const std::string& path) {
    throw IoError(what + ": " + path);
}

}  // namespace ofakd
