// SPDX-License-Identifier: Apache-2.0
//
// Closed-lexicon integer vocabulary. Word ids are assigned once, in a
// fixed order: special tokens, single characters (digits, punctuation),
// then every word appearing in the instruction templates and the scene
// lexicon. No subword machinery; unknown words are an error.

#ifndef TPO_VOCAB_HPP
#define TPO_VOCAB_HPP

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpo/templates.hpp"
#include "tpo/types.hpp"

namespace tpo {

struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kVis = 3;   // visual-placeholder (box prompt injection point)
    static constexpr int kConv = 4;  // <CONV>
    static constexpr int kBox = 5;   // <BOX>
    static constexpr int kTime = 6;  // <TIME>
    static constexpr int kTrack = 7; // <TRACK>
    static constexpr int kMask = 8;  // <MASK>
    static constexpr int kTaskSlot = 9;  // reserved for the appended task-token slot

    std::vector<std::string> words;
    std::map<std::string, int> index;

    Vocab() {
        for (const char* s : {"<pad>", "<bos>", "<eos>", "<vis>", "<conv>", "<box>",
                              "<time>", "<track>", "<mask>", "<task>"})
            add(s);
        for (char c = '0'; c <= '9'; ++c) add(std::string(1, c));
        for (char c : {'.', ',', '[', ']', '?', '!', '\'', ':'}) add(std::string(1, c));
        for (TaskKind k : {TaskKind::Conversation, TaskKind::SpatialGrounding,
                           TaskKind::TemporalGrounding, TaskKind::Tracking,
                           TaskKind::Segmentation})
            for (const std::string& t : templates_for(k))
                for (const std::string& w : split_words(t)) add(w);
        for (const char* s :
             {"red", "green", "blue", "yellow", "magenta", "cyan", "orange", "white",
              "square", "circle", "triangle", "one", "two", "three", "four", "five",
              "six", "seven", "eight", "nine", "zero", "frame", "yes", "no", "it",
              "appears", "at", "shown", "there", "are", "shapes", "i", "see", "a",
              "moving", "still", "and", "none"})
            add(s);
    }

    int size() const { return static_cast<int>(words.size()); }

    static int indicator_token(TaskKind k) {
        switch (k) {
            case TaskKind::Conversation: return kConv;
            case TaskKind::SpatialGrounding: return kBox;
            case TaskKind::TemporalGrounding: return kTime;
            case TaskKind::Tracking: return kTrack;
            case TaskKind::Segmentation: return kMask;
        }
        throw std::invalid_argument("bad task kind");
    }

    static TaskKind kind_from_indicator(int id) {
        switch (id) {
            case kConv: return TaskKind::Conversation;
            case kBox: return TaskKind::SpatialGrounding;
            case kTime: return TaskKind::TemporalGrounding;
            case kTrack: return TaskKind::Tracking;
            case kMask: return TaskKind::Segmentation;
        }
        throw std::invalid_argument("not an indicator token");
    }

    // Lowercases, splits on whitespace, and isolates digits/punctuation as
    // single-character tokens so coordinate strings tokenize exactly.
    static std::vector<std::string> split_words(const std::string& text) {
        std::vector<std::string> out;
        std::string cur;
        auto flush = [&]() {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        };
        for (char ch : text) {
            char c = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            if (std::isspace(static_cast<unsigned char>(c))) {
                flush();
            } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                       std::string(".,[]?!':").find(c) != std::string::npos) {
                flush();
                out.emplace_back(1, c);
            } else {
                cur += c;
            }
        }
        flush();
        return out;
    }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> ids;
        for (const std::string& w : split_words(text)) {
            auto it = index.find(w);
            if (it == index.end()) throw std::invalid_argument("word outside lexicon: " + w);
            ids.push_back(it->second);
        }
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            if (id < 0 || id >= size()) throw std::out_of_range("token id");
            if (!out.empty()) out += ' ';
            out += words[id];
        }
        return out;
    }

    static const Vocab& get() {
        static const Vocab v;
        return v;
    }

private:
    void add(const std::string& w) {
        if (index.count(w)) return;
        index[w] = static_cast<int>(words.size());
        words.push_back(w);
    }
};

}  // namespace tpo

#endif  // TPO_VOCAB_HPP
