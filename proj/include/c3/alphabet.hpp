// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace c3 {

/// Character set shared by the recognizers and the language model:
/// a-z, 0-9 plus a trailing blank symbol (CTC blank / pad).
class Alphabet {
 public:
  Alphabet() : chars_("abcdefghijklmnopqrstuvwxyz0123456789") {
    ids_.assign(256, -1);
    for (size_t i = 0; i < chars_.size(); ++i) ids_[static_cast<unsigned char>(chars_[i])] = static_cast<int>(i);
  }

  int size() const { return static_cast<int>(chars_.size()) + 1; }  // |A|, blank included
  int blank() const { return static_cast<int>(chars_.size()); }
  char char_at(int id) const { return chars_[static_cast<size_t>(id)]; }
  int num_chars() const { return static_cast<int>(chars_.size()); }

  int id_of(char c) const {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return ids_[static_cast<unsigned char>(c)];
  }

  bool contains(char c) const { return id_of(c) >= 0; }

  bool valid_text(const std::string& s) const {
    for (char c : s)
      if (!contains(c)) return false;
    return true;
  }

  std::vector<int> to_ids(const std::string& s) const {
    std::vector<int> ids;
    ids.reserve(s.size());
    for (char c : s) ids.push_back(id_of(c));
    return ids;
  }

  const std::string& chars() const { return chars_; }

 private:
  std::string chars_;
  std::vector<int> ids_;
};

}  // namespace c3
