#ifndef UAI_FILES_H_
#define UAI_FILES_H_

#include <filesystem>
#include <string>

namespace uai {

// Writes through a sibling .tmp file and renames it into place, so readers
// see either the old contents or the new ones. Throws IoError.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

// Throws IoError when the file cannot be read.
std::string read_file(const std::filesystem::path& path);

}  // namespace uai

#endif  // UAI_FILES_H_
