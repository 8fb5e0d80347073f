#pragma once
// Byte-level data handling: the tokenizer (one id per byte plus a
// begin-of-sequence marker), corpus blocking, a deterministic synthetic
// corpus, and the retrieval (needle-in-a-haystack) task family.
//
// Retrieval sequences are built from fixed-width lines so that line
// boundaries coincide with 32-token split boundaries: the id sequence
// opens with the begin marker plus a 31-byte header line (filling split
// zero exactly), and every following line is 32 bytes. The needle spans
// two such lines, the question two more, and the prompt always ends flush
// on a boundary, right after "is".

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <string>
#include <vector>

#include "avey/common.hpp"

namespace avey {

inline constexpr int kByteVocab = 256;
inline constexpr int kBosId = 256;
inline constexpr int kPaddedByteVocab = 320;  // 257 rounded up to 64

// --- Byte codec ------------------------------------------------------------

inline std::vector<int> byte_encode(const std::string& text,
                                    bool add_bos = false) {
  std::vector<int> ids;
  ids.reserve(text.size() + (add_bos ? 1 : 0));
  if (add_bos) ids.push_back(kBosId);
  for (unsigned char c : text) ids.push_back(static_cast<int>(c));
  return ids;
}

// Ids above the byte range decode to the Unicode replacement character.
inline std::string byte_decode(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    require(id >= 0, "byte_decode: negative token id");
    if (id < kByteVocab)
      out.push_back(static_cast<char>(id));
    else
      out += "\xEF\xBF\xBD";
  }
  return out;
}

// --- Corpus blocking -------------------------------------------------------

// Non-overlapping blocks of context + 1 byte ids, shuffled by seed; a
// short trailing block is dropped.
inline std::vector<std::vector<int>> corpus_batches(const std::string& text,
                                                    int context,
                                                    std::uint64_t seed) {
  require(context > 0, "corpus_batches: context must be positive");
  std::size_t step = static_cast<std::size_t>(context) + 1;
  require(text.size() >= step, "corpus_batches: corpus of " +
                                   std::to_string(text.size()) +
                                   " bytes is shorter than one block of " +
                                   std::to_string(step));
  std::vector<std::vector<int>> blocks;
  for (std::size_t b = 0; b + step <= text.size(); b += step) {
    std::vector<int> ids(step);
    for (std::size_t i = 0; i < step; ++i)
      ids[i] = static_cast<int>(static_cast<unsigned char>(text[b + i]));
    blocks.push_back(std::move(ids));
  }
  Rng rng(seed);
  for (std::size_t i = blocks.size(); i > 1; --i)
    std::swap(blocks[i - 1], blocks[uniform_int(rng, i)]);
  return blocks;
}

// --- Deterministic synthetic corpus ---------------------------------------

namespace detail {

inline const std::vector<std::string>& corpus_words() {
  static const std::vector<std::string> w = {
      "the",    "a",       "morning", "river",  "light",   "stone",
      "garden", "harbor",  "letter",  "window", "quiet",   "winter",
      "road",   "bridge",  "market",  "voice",  "shadow",  "door",
      "field",  "evening", "rain",    "paper",  "clock",   "lantern",
      "old",    "small",   "long",    "grey",   "warm",    "narrow",
      "slow",   "bright",  "early",   "late",   "open",    "distant",
      "walked", "turned",  "waited",  "opened", "carried", "watched",
      "found",  "crossed", "settled", "passed", "stood",   "moved",
      "under",  "over",    "beside",  "toward", "through", "behind",
      "near",   "across",  "between", "after",  "before",  "around",
      "and",    "but",     "then",    "while",  "again",   "still",
      "house",  "street",  "coat",    "table",  "candle",  "hill",
      "path",   "forest",  "valley",  "sky",    "cloud",   "wall",
      "boat",   "train",   "station", "square", "tower",   "bell"};
  return w;
}

}  // namespace detail

// English-like filler text: seeded sentences from a fixed word pool,
// broken into paragraphs. Equal seeds give identical corpora.
inline std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed) {
  const auto& words = detail::corpus_words();
  Rng rng(seed);
  std::string out;
  out.reserve(bytes + 128);
  std::size_t sentences_in_para = 0;
  std::size_t para_len = 5 + uniform_int(rng, 5);
  while (out.size() < bytes) {
    std::size_t n = 5 + uniform_int(rng, 7);
    std::string sentence;
    for (std::size_t i = 0; i < n; ++i) {
      if (i) sentence += (i == n / 2 && n > 7) ? ", " : " ";
      sentence += words[uniform_int(rng, words.size())];
    }
    sentence[0] = static_cast<char>(std::toupper(sentence[0]));
    sentence += ".";
    out += sentence;
    if (++sentences_in_para >= para_len) {
      out += "\n\n";
      sentences_in_para = 0;
      para_len = 5 + uniform_int(rng, 5);
    } else {
      out += " ";
    }
  }
  out.resize(bytes);
  return out;
}

// --- Retrieval task --------------------------------------------------------

enum class NiahKind { passkey_kv, passkey_numeric };

inline NiahKind niah_kind_from_string(const std::string& s) {
  if (s == "passkey_kv") return NiahKind::passkey_kv;
  if (s == "passkey_numeric") return NiahKind::passkey_numeric;
  throw ContractViolation("unknown task kind '" + s +
                          "' (expected passkey_kv or passkey_numeric)");
}

inline std::string to_string(NiahKind k) {
  return k == NiahKind::passkey_kv ? "passkey_kv" : "passkey_numeric";
}

struct NiahInstance {
  std::vector<int> prompt;   // begin marker + bytes, length a multiple of 32
  std::string prompt_text;   // the byte portion
  std::string answer;        // value digits plus the closing period
  std::string key, value;
  int filler_lines = 0;
  int needle_slot = 0;       // needle position among filler slots
  double depth_actual = 0;
};

namespace detail {

inline constexpr std::size_t kLine = 32;

// Pads with spaces to exactly width bytes, newline-terminated.
inline std::string pad_line(std::string s, std::size_t width) {
  require(s.size() < width, "line '" + s + "' does not fit " +
                                std::to_string(width) + " bytes");
  s.append(width - 1 - s.size(), ' ');
  s.push_back('\n');
  return s;
}

inline std::string niah_header() {
  // 31 bytes; the begin marker in front completes the first 32-id split.
  std::string h = "== pass key practice log ==";
  h.append(kLine - 2 - h.size(), ' ');
  h.push_back('\n');
  require(h.size() == kLine - 1, "retrieval header must be 31 bytes");
  return h;
}

// Key-value style decoy: same shape as the needle, lowercase, digit-free.
inline std::string decoy_kv(Rng& rng) {
  static const std::vector<std::string> obj = {"code",  "label", "badge",
                                               "stamp", "token", "seal"};
  static const std::vector<std::string> place = {
      "door",   "gate",  "vault", "locker", "drawer",
      "cellar", "attic", "cabin", "garage", "shed"};
  static const std::vector<std::string> mat = {
      "walnut", "copper", "basalt", "willow", "cobalt",
      "amber",  "maroon", "pewter", "ochre",  "slate"};
  std::string s = "the " + obj[uniform_int(rng, obj.size())] + " for " +
                  place[uniform_int(rng, place.size())] + " is " +
                  mat[uniform_int(rng, mat.size())];
  return pad_line(s, kLine);
}

// Essay-style decoy: plain prose, lowercase, digit-free.
inline std::string decoy_essay(Rng& rng) {
  static const std::vector<std::string> lines = {
      "the river bends past the mill",
      "rain settled over the valley",
      "a lantern swung in the doorway",
      "the orchard smelled of apples",
      "wind moved through the rushes",
      "the harbor lights blinked",
      "moss covered the garden wall",
      "the kettle hummed on the stove",
      "dust drifted across the road",
      "the meadow lay quiet at dusk"};
  return pad_line(lines[uniform_int(rng, lines.size())], kLine);
}

inline std::string decoy_line(NiahKind kind, Rng& rng) {
  return kind == NiahKind::passkey_kv ? decoy_kv(rng) : decoy_essay(rng);
}

inline std::string random_key(Rng& rng) {
  std::string k(20, 'A');
  for (char& c : k) c = static_cast<char>('A' + uniform_int(rng, 26));
  return k;
}

inline std::string random_value(Rng& rng) {
  std::string v(9, '0');
  for (char& c : v) c = static_cast<char>('0' + uniform_int(rng, 10));
  return v;
}

// The needle occupies exactly two lines; the key starts 17 bytes in, so
// its first 15 letters land in the first line and the last 5 in the
// second, next to " is " and the value.
inline std::string needle_lines(const std::string& key,
                                const std::string& value) {
  std::string s = "The pass key for " + key + " is " + value + ".";
  return pad_line(std::move(s), 2 * kLine);
}

// Two question lines; the second ends flush at "is " so the prompt stops
// exactly on a split boundary with the full key inside the final split.
// The trailing space mirrors the needle's own "is " so the byte after the
// prompt continues the needle verbatim: a copy of the needle's suffix is
// exactly the right answer, in training blocks and at evaluation alike.
inline std::string question_lines(const std::string& key) {
  std::string q1 = pad_line("What is the pass key for", kLine);
  std::string q2 = std::string(kLine - key.size() - 4, ' ') + key + " is ";
  require(q2.size() == kLine, "question tail must fill its line");
  return q1 + q2;
}

// Answer line for training sequences: the value and a period, repeated as
// often as they fit, then padding. The first copy continues the needle
// byte for byte; the repeats give every digit further supervised
// occurrences whose source sits inside the answer's own line.
inline std::string answer_line(const std::string& value) {
  std::string unit = value + ".";
  std::string s;
  while (s.size() + unit.size() <= kLine) s += unit;
  return pad_line(std::move(s), kLine);
}

// Haystack + needle + question as one aligned string of
// (filler_lines + 5) * 32 bytes (the needle and question take two lines
// each, the header one with the begin marker).
struct NiahText {
  std::string text;
  int slot = 0;
};

inline NiahText render_niah(NiahKind kind, int filler_lines, int slot,
                            const std::string& key, const std::string& value,
                            Rng& rng) {
  require(filler_lines >= 1, "retrieval haystack needs at least one line");
  require(slot >= 0 && slot <= filler_lines,
          "needle slot outside the haystack");
  NiahText out;
  out.slot = slot;
  out.text = niah_header();
  for (int i = 0; i <= filler_lines; ++i) {
    if (i == slot)
      out.text += needle_lines(key, value);
    if (i < filler_lines) out.text += decoy_line(kind, rng);
  }
  out.text += question_lines(key);
  return out;
}

}  // namespace detail

// One evaluation instance. length counts token ids including the begin
// marker and must be a multiple of 32, at least 192; depth in [0, 1]
// places the needle within one filler line of that fraction of the
// haystack.
inline NiahInstance gen_niah(NiahKind kind, int length, double depth,
                             std::uint64_t seed) {
  require(length % 32 == 0 && length >= 192,
          "retrieval prompt length must be a multiple of 32, at least 192 "
          "(got " +
              std::to_string(length) + ")");
  require(depth >= 0.0 && depth <= 1.0,
          "retrieval depth must lie in [0, 1]");
  int filler = length / 32 - 5;
  int slot = std::min<int>(
      filler, static_cast<int>(depth * (filler + 1)));
  Rng rng(seed);
  NiahInstance inst;
  inst.key = detail::random_key(rng);
  inst.value = detail::random_value(rng);
  inst.answer = inst.value + ".";
  inst.filler_lines = filler;
  inst.needle_slot = slot;
  inst.depth_actual = filler > 0 ? static_cast<double>(slot) / filler : 0.0;
  auto rendered =
      detail::render_niah(kind, filler, slot, inst.key, inst.value, rng);
  inst.prompt_text = rendered.text;
  inst.prompt = byte_encode(inst.prompt_text, /*add_bos=*/true);
  require(static_cast<int>(inst.prompt.size()) == length,
          "retrieval prompt rendered to " +
              std::to_string(inst.prompt.size()) + " ids, expected " +
              std::to_string(length));
  return inst;
}

// One training block of context + 1 ids: a short haystack, the needle at a
// seeded slot, the question, and the answer line, with one lookahead byte
// for the final target. context must be a multiple of 32, at least 224.
inline std::vector<int> niah_training_block(NiahKind kind, int context,
                                            std::uint64_t seed) {
  require(context % 32 == 0 && context >= 224,
          "retrieval training context must be a multiple of 32, at least "
          "224 (got " +
              std::to_string(context) + ")");
  int filler = context / 32 - 6;  // needle 2, question 2, answer 1, header 1
  Rng rng(seed);
  std::string key = detail::random_key(rng);
  std::string value = detail::random_value(rng);
  int slot = static_cast<int>(uniform_int(rng, filler + 1));
  auto rendered = detail::render_niah(kind, filler, slot, key, value, rng);
  std::string text = rendered.text + detail::answer_line(value) + "t";
  std::vector<int> ids = byte_encode(text, /*add_bos=*/true);
  require(static_cast<int>(ids.size()) == context + 1,
          "retrieval training block rendered to " +
              std::to_string(ids.size()) + " ids, expected context + 1");
  return ids;
}

// Deterministic family of training blocks.
inline std::vector<std::vector<int>> niah_training_blocks(NiahKind kind,
                                                          int context,
                                                          int count,
                                                          std::uint64_t seed) {
  require(count > 0, "niah_training_blocks: count must be positive");
  std::vector<std::vector<int>> blocks;
  blocks.reserve(count);
  for (int i = 0; i < count; ++i)
    blocks.push_back(
        niah_training_block(kind, context, seed * 1000003ULL + i));
  return blocks;
}

// An instance is solved when the decoded continuation contains the value.
inline bool score_niah(const std::string& generated,
                       const NiahInstance& inst) {
  return generated.find(inst.value) != std::string::npos;
}

// --- Base64 (for task dump files) -----------------------------------------

inline std::string base64_encode(const std::string& in) {
  static const char* tbl =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 3 <= in.size()) {
    std::uint32_t v = (static_cast<unsigned char>(in[i]) << 16) |
                      (static_cast<unsigned char>(in[i + 1]) << 8) |
                      static_cast<unsigned char>(in[i + 2]);
    i += 3;
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(tbl[(v >> 6) & 63]);
    out.push_back(tbl[v & 63]);
  }
  std::size_t rem = in.size() - i;
  if (rem == 1) {
    std::uint32_t v = static_cast<unsigned char>(in[i]) << 16;
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out += "==";
  } else if (rem == 2) {
    std::uint32_t v = (static_cast<unsigned char>(in[i]) << 16) |
                      (static_cast<unsigned char>(in[i + 1]) << 8);
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(tbl[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

inline std::string base64_decode(const std::string& in) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    if (c == '=') return -1;
    throw ContractViolation("base64_decode: invalid character");
  };
  require(in.size() % 4 == 0, "base64_decode: length not a multiple of 4");
  std::string out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i < in.size(); i += 4) {
    int a = val(in[i]), b = val(in[i + 1]), c = val(in[i + 2]),
        d = val(in[i + 3]);
    require(a >= 0 && b >= 0, "base64_decode: malformed quartet");
    std::uint32_t v = (a << 18) | (b << 12) | ((c < 0 ? 0 : c) << 6) |
                      (d < 0 ? 0 : d);
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    if (c >= 0) out.push_back(static_cast<char>((v >> 8) & 0xFF));
    if (d >= 0) out.push_back(static_cast<char>(v & 0xFF));
  }
  return out;
}

}  // namespace avey
