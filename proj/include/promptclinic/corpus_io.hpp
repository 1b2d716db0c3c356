#pragma once

#include "promptclinic/chat.hpp"

#include <filesystem>

namespace promptclinic {

// Normalized corpus archive (JSON): transcripts with labels, speakers and
// both raw and cleaned utterance text. The `parse` subcommand writes it; the
// `run` subcommand can read it instead of re-parsing .cha files.
void save_corpus_archive(const std::filesystem::path& path, const Corpus& corpus);
Corpus load_corpus_archive(const std::filesystem::path& path);

} // namespace promptclinic
