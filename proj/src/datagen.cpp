#include "patchlab/datagen.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <unordered_set>

#include "patchlab/fsio.hpp"

namespace patchlab {

using nlohmann::json;

const std::vector<std::string>& VocabularySet::at(const std::string& category) const {
  const auto it = categories.find(category);
  if (it == categories.end() || it->second.empty())
    throw InputError("vocabulary (" + tag + ") has no category '" + category + "'");
  return it->second;
}

std::string vocab_to_json_text(const VocabularySet& v) {
  json cats = json::object();
  for (const auto& [name, words] : v.categories) cats[name] = words;
  return json{{"tag", v.tag}, {"categories", cats}}.dump(2) + "\n";
}

VocabularySet vocab_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("vocabulary file is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("tag") || !j["tag"].is_string() ||
      !j.contains("categories") || !j["categories"].is_object())
    throw InputError("vocabulary file needs a string 'tag' and an object 'categories'");
  VocabularySet v;
  v.tag = j["tag"].get<std::string>();
  for (const auto& [name, words] : j["categories"].items()) {
    if (!words.is_array()) throw InputError("vocabulary category '" + name + "' must be a list");
    for (const auto& w : words) {
      if (!w.is_string() || w.get<std::string>().empty())
        throw InputError("vocabulary category '" + name + "' has a non-string or empty entry");
      v.categories[name].push_back(w.get<std::string>());
    }
  }
  return v;
}

VocabularySet load_vocab(const std::filesystem::path& path) {
  return vocab_from_json_text(read_text_file(path));
}

void save_vocab(const std::filesystem::path& path, const VocabularySet& v) {
  write_text_file_atomic(path, vocab_to_json_text(v));
}

// ---------------------------------------------------------------------------
// Built-in vocabularies. Two fully disjoint word sets; the in-distribution
// lists contain every lexical item the canonical example sentences use.
// Multi-word entries (verb + preposition) keep a fixed word count per
// category so sentence shapes stay constant within a construction.

VocabularySet builtin_id_vocab() {
  VocabularySet v;
  v.tag = "id";
  v.categories["noun_person"] = {
      "man",     "teacher", "boy",    "doctor", "girl",   "customer", "lady",
      "boss",    "dancer",  "kid",    "guest",  "host",   "patient",  "actor",
      "nurse",   "lawyer",  "judge",  "pilot",  "farmer", "singer",   "writer",
      "painter", "driver",  "waiter", "baker",  "soldier", "sailor",  "priest",
      "clerk",   "coach",   "tutor",  "student", "neighbor", "cousin", "mayor",
      "banker",  "barber",  "chemist", "scholar", "poet",  "critic",  "editor"};
  v.categories["noun_plural"] = {
      "boys",     "students", "senators", "teachers", "girls",    "doctors",
      "lawyers",  "nurses",   "pilots",   "farmers",  "singers",  "writers",
      "painters", "drivers",  "waiters",  "bakers",   "soldiers", "sailors",
      "priests",  "clerks",   "coaches",  "tutors",   "neighbors", "cousins",
      "mayors",   "bankers",  "barbers",  "chemists", "scholars", "poets",
      "critics",  "editors",  "judges",   "actors",   "dancers",  "guests",
      "hosts",    "patients", "customers", "kids"};
  v.categories["verb_past"] = {
      "liked",   "admired",  "scared",  "hated",   "showed",  "trusted", "praised",
      "blamed",  "helped",   "called",  "pushed",  "pulled",  "carried", "followed",
      "visited", "invited",  "ignored", "noticed", "watched", "chased",  "greeted",
      "hugged",  "thanked",  "warned",  "teased",  "tricked", "fooled",  "saved",
      "lifted",  "dropped",  "grabbed", "touched", "poked",   "tackled", "dodged",
      "copied",  "quoted",   "sketched", "filmed", "painted"};
  v.categories["verb_base"] = {
      "choose", "see",    "meet",  "call",  "help",  "trust", "praise", "blame",
      "push",   "pull",   "carry", "follow", "visit", "invite", "ignore", "notice",
      "watch",  "chase",  "greet", "hug",   "thank", "warn",  "tease",  "trick",
      "fool",   "save",   "lift",  "drop",  "grab",  "touch", "poke",   "tackle",
      "dodge",  "copy",   "quote", "sketch", "film",  "draw",  "paint",  "join"};
  v.categories["verb_3sg"] = {
      "eats",   "makes",  "drinks", "reads",  "sings",  "runs",    "walks",
      "jumps",  "swims",  "cooks",  "bakes",  "cleans", "paints",  "draws",
      "smiles", "laughs", "cries",  "shouts", "whispers", "waves", "nods",
      "claps",  "stands", "sits",   "kneels", "crawls", "climbs",  "dives",
      "skates", "hikes",  "jogs",   "naps",   "snores", "hums",    "whistles",
      "stretches", "yawns", "dances", "sleeps", "writes"};
  v.categories["verb_intr"] = {
      "sleep",  "rest",  "wait",   "leave", "smile",  "laugh", "cry",   "shout",
      "whisper", "run",  "walk",   "jump",  "swim",   "dance", "sing",  "nap",
      "snore",  "hum",   "whistle", "stretch", "yawn", "stand", "sit",  "kneel",
      "crawl",  "climb", "dive",   "skate", "hike",   "jog",   "clap",  "nod",
      "wave",   "stay",  "rise",   "fall",  "blink",  "cough", "sneeze", "read"};
  v.categories["verb_past_prep"] = {
      "sounded like",  "looked at",   "talked about",  "laughed at",    "waited for",
      "cared for",     "argued with", "agreed with",   "worked with",   "played with",
      "spoke to",      "wrote to",    "walked with",   "ran from",      "hid from",
      "learned from",  "heard about", "thought about", "dreamed about", "complained about",
      "talked to",     "shouted at",  "stared at",     "glanced at",    "pointed at",
      "smiled at",     "nodded at",   "waved at",      "yelled at",     "growled at",
      "winked at",     "marveled at", "hinted at",     "called for",    "paid for",
      "voted for",     "rooted for",  "fought with",   "sang to",       "bowed to"};
  v.categories["verb_prog_prep"] = {
      "listening to",  "talking to",    "pointing at",   "staring at",
      "looking at",    "waving at",     "smiling at",    "shouting at",
      "laughing at",   "winking at",    "glancing at",   "waiting for",
      "caring for",    "rooting for",   "voting for",    "paying for",
      "calling for",   "arguing with",  "agreeing with", "working with",
      "playing with",  "walking with",  "speaking to",   "writing to",
      "running from",  "hiding from",   "learning from", "hearing about",
      "thinking about", "dreaming about", "complaining about", "talking about",
      "yelling at",    "growling at",   "nodding at",    "marveling at",
      "hinting at",    "fighting with", "dancing with",  "singing to"};
  v.categories["verb_ppast"] = {
      "found",  "sold",   "bought", "made",   "kept",    "held",    "told",
      "built",  "won",    "lost",   "caught", "taught",  "brought", "sought",
      "sent",   "spent",  "lent",   "laid",   "met",     "felt",    "worn",
      "torn",   "drawn",  "thrown", "grown",  "known",   "shown",   "chosen",
      "driven", "written", "ridden", "hidden", "eaten",  "taken",   "shaken",
      "given",  "forgiven", "beaten", "frozen", "stolen"};
  v.categories["adj_sup"] = {
      "fastest",  "tallest",  "smartest",  "kindest",  "bravest",   "oldest",
      "youngest", "strongest", "weakest",  "richest",  "poorest",   "happiest",
      "saddest",  "funniest", "quietest",  "loudest",  "calmest",   "wildest",
      "neatest",  "messiest", "cleverest", "gentlest", "proudest",  "humblest",
      "busiest",  "laziest",  "luckiest",  "coolest",  "warmest",   "coldest",
      "brightest", "darkest", "sweetest",  "toughest", "softest",   "hardest",
      "thinnest", "thickest", "shortest",  "slowest"};
  v.categories["adj_plain"] = {
      "fast",  "tall",  "smart",  "kind",   "brave",  "old",   "young", "strong",
      "weak",  "rich",  "poor",   "happy",  "sad",    "funny", "quiet", "loud",
      "calm",  "wild",  "neat",   "messy",  "clever", "gentle", "proud", "humble",
      "busy",  "lazy",  "lucky",  "cool",   "warm",   "cold",  "bright", "dark",
      "sweet", "tough", "soft",   "hard",   "thin",   "thick", "short", "slow"};
  v.categories["capital_city"] = {
      "Paris",    "Rome",      "Madrid",    "Lisbon",     "Berlin",    "Vienna",
      "Athens",   "Oslo",      "Stockholm", "Helsinki",   "Copenhagen", "Warsaw",
      "Prague",   "Budapest",  "Bucharest", "Sofia",      "Belgrade",  "Zagreb",
      "Ljubljana", "Bratislava", "Dublin",  "London",     "Moscow",    "Kyiv",
      "Minsk",    "Vilnius",   "Riga",      "Tallinn",    "Ankara",    "Cairo",
      "Tunis",    "Algiers",   "Rabat",     "Nairobi",    "Accra",     "Dakar",
      "Lima",     "Santiago",  "Bogota",    "Havana"};
  v.categories["capital_country"] = {
      "France",   "Italy",    "Spain",    "Portugal", "Germany",  "Austria",
      "Greece",   "Norway",   "Sweden",   "Finland",  "Denmark",  "Poland",
      "Czechia",  "Hungary",  "Romania",  "Bulgaria", "Serbia",   "Croatia",
      "Slovenia", "Slovakia", "Ireland",  "England",  "Russia",   "Ukraine",
      "Belarus",  "Lithuania", "Latvia",  "Estonia",  "Turkey",   "Egypt",
      "Tunisia",  "Algeria",  "Morocco",  "Kenya",    "Ghana",    "Senegal",
      "Peru",     "Chile",    "Colombia", "Cuba"};
  v.categories["adverb"] = {
      "Apparently,",  "Clearly,",     "Evidently,",   "Officially,",  "Certainly,",
      "Surely,",      "Naturally,",   "Frankly,",     "Truly,",       "Indeed,",
      "Undoubtedly,", "Undeniably,",  "Admittedly,",  "Arguably,",    "Basically,",
      "Broadly,",     "Essentially,", "Factually,",   "Formally,",    "Generally,",
      "Genuinely,",   "Historically,", "Importantly,", "Incidentally,", "Initially,",
      "Legally,",     "Literally,",   "Logically,",   "Notably,",     "Objectively,",
      "Practically,", "Presently,",   "Presumably,",  "Previously,",  "Primarily,",
      "Publicly,",    "Really,",      "Reportedly,",  "Roughly,",     "Seriously,"};
  return v;
}

VocabularySet builtin_ood_vocab() {
  VocabularySet v;
  v.tag = "ood";
  v.categories["noun_person"] = {
      "architect",  "engineer",   "violinist",  "librarian",  "magician",
      "acrobat",    "diplomat",   "referee",    "umpire",     "juggler",
      "novelist",   "sculptor",   "curator",    "janitor",    "cashier",
      "courier",    "pharmacist", "therapist",  "translator", "interpreter",
      "announcer",  "comedian",   "drummer",    "guitarist",  "pianist",
      "conductor",  "inspector",  "detective",  "guard",      "warden",
      "ranger",     "scout",      "messenger",  "merchant",   "trader",
      "shepherd",   "weaver",     "potter",     "blacksmith", "locksmith"};
  v.categories["noun_plural"] = {
      "architects",  "engineers",   "violinists",  "librarians",  "magicians",
      "acrobats",    "diplomats",   "referees",    "umpires",     "jugglers",
      "novelists",   "sculptors",   "curators",    "janitors",    "cashiers",
      "couriers",    "pharmacists", "therapists",  "translators", "interpreters",
      "announcers",  "comedians",   "drummers",    "guitarists",  "pianists",
      "conductors",  "inspectors",  "detectives",  "guards",      "wardens",
      "rangers",     "scouts",      "messengers",  "merchants",   "traders",
      "shepherds",   "weavers",     "potters",     "blacksmiths", "locksmiths"};
  v.categories["verb_past"] = {
      "mocked",     "envied",     "courted",    "briefed",    "audited",
      "scolded",    "saluted",    "escorted",   "recruited",  "nominated",
      "promoted",   "demoted",    "suspended",  "endorsed",   "applauded",
      "heckled",    "interviewed", "lectured",  "mentored",   "summoned",
      "pardoned",   "bribed",     "flattered",  "insulted",   "imitated",
      "startled",   "amused",     "bored",      "confused",   "impressed",
      "inspired",   "motivated",  "persuaded",  "reminded",   "surprised",
      "consoled",   "comforted",  "distracted", "embarrassed", "entertained"};
  v.categories["verb_base"] = {
      "mock",    "envy",    "court",    "brief",    "audit",    "scold",
      "salute",  "escort",  "recruit",  "nominate", "promote",  "demote",
      "suspend", "endorse", "applaud",  "heckle",   "interview", "lecture",
      "mentor",  "summon",  "pardon",   "bribe",    "flatter",  "insult",
      "imitate", "startle", "amuse",    "bore",     "confuse",  "impress",
      "inspire", "motivate", "persuade", "remind",  "surprise", "console",
      "comfort", "distract", "embarrass", "entertain"};
  v.categories["verb_3sg"] = {
      "gallops",  "trots",    "wanders",  "roams",    "drifts",   "floats",
      "glides",   "soars",    "hovers",   "perches",  "burrows",  "grazes",
      "prowls",   "slithers", "scampers", "waddles",  "struts",   "marches",
      "sprints",  "dashes",   "lunges",   "leaps",    "vaults",   "tumbles",
      "rolls",    "spins",    "twirls",   "sways",    "wobbles",  "totters",
      "stumbles", "trudges",  "plods",    "ambles",   "strolls",  "saunters",
      "lingers",  "pauses",   "rests",    "dozes"};
  v.categories["verb_intr"] = {
      "gallop",  "trot",    "wander",  "roam",    "drift",   "float",
      "glide",   "soar",    "hover",   "perch",   "burrow",  "graze",
      "prowl",   "slither", "scamper", "waddle",  "strut",   "march",
      "sprint",  "dash",    "lunge",   "leap",    "vault",   "tumble",
      "roll",    "spin",    "twirl",   "sway",    "wobble",  "totter",
      "stumble", "trudge",  "plod",    "amble",   "stroll",  "saunter",
      "linger",  "doze",    "fidget",  "shiver"};
  v.categories["verb_past_prep"] = {
      "grumbled about", "boasted about",  "fretted about",  "raved about",
      "quarreled with", "bargained with", "sided with",     "bonded with",
      "sparred with",   "mingled with",   "chatted with",   "gossiped about",
      "bragged about",  "moaned about",   "grieved for",    "yearned for",
      "longed for",     "opted for",      "settled for",    "lobbied for",
      "prayed for",     "gazed at",       "sneered at",     "scoffed at",
      "frowned at",     "squinted at",    "peeked at",      "gawked at",
      "leered at",      "barked at",      "hissed at",      "swiped at",
      "clawed at",      "snapped at",     "grinned at",     "murmured to",
      "muttered to",    "signaled to",    "surrendered to", "objected to"};
  v.categories["verb_prog_prep"] = {
      "grumbling about", "boasting about",  "fretting about",  "raving about",
      "quarreling with", "bargaining with", "siding with",     "bonding with",
      "sparring with",   "mingling with",   "chatting with",   "gossiping about",
      "bragging about",  "moaning about",   "grieving for",    "yearning for",
      "longing for",     "opting for",      "settling for",    "lobbying for",
      "praying for",     "gazing at",       "sneering at",     "scoffing at",
      "frowning at",     "squinting at",    "peeking at",      "gawking at",
      "leering at",      "barking at",      "hissing at",      "swiping at",
      "clawing at",      "snapping at",     "grinning at",     "murmuring to",
      "muttering to",    "signaling to",    "surrendering to", "objecting to"};
  v.categories["verb_ppast"] = {
      "borrowed",  "rented",   "leased",   "shipped",  "hauled",   "packed",
      "stacked",   "stored",   "hoarded",  "gathered", "harvested", "plucked",
      "carved",    "molded",   "welded",   "forged",   "stitched", "knitted",
      "brewed",    "roasted",  "grilled",  "toasted",  "sliced",   "diced",
      "peeled",    "mashed",   "stirred",  "whisked",  "kneaded",  "polished",
      "scrubbed",  "rinsed",   "mopped",   "swept",    "dusted",   "folded",
      "ironed",    "varnished", "engraved", "embroidered"};
  v.categories["adj_sup"] = {
      "grandest",  "plainest",   "purest",    "ripest",    "rarest",    "finest",
      "crudest",   "densest",    "sparsest",  "steepest",  "flattest",  "roundest",
      "smoothest", "roughest",   "shiniest",  "dullest",   "sharpest",  "bluntest",
      "tidiest",   "sloppiest",  "sturdiest", "flimsiest", "heaviest",  "lightest",
      "widest",    "narrowest",  "deepest",   "shallowest", "highest",  "lowest",
      "nearest",   "earliest",   "latest",    "newest",    "freshest",  "stalest",
      "strangest", "mildest",    "bleakest",  "quaintest"};
  v.categories["adj_plain"] = {
      "grand",  "plain",   "pure",   "ripe",    "rare",  "fine",   "crude",
      "dense",  "sparse",  "steep",  "flat",    "round", "smooth", "rough",
      "shiny",  "dull",    "sharp",  "blunt",   "tidy",  "sloppy", "sturdy",
      "flimsy", "heavy",   "light",  "wide",    "narrow", "deep",  "shallow",
      "high",   "low",     "near",   "early",   "late",  "new",    "fresh",
      "stale",  "strange", "mild",   "bleak",   "quaint"};
  v.categories["capital_city"] = {
      "Tokyo",     "Beijing",   "Bangkok",   "Hanoi",      "Manila",    "Jakarta",
      "Canberra",  "Ottawa",    "Kingston",  "Caracas",    "Quito",     "Montevideo",
      "Asuncion",  "Brasilia",  "Kathmandu", "Islamabad",  "Kabul",     "Tehran",
      "Baghdad",   "Damascus",  "Amman",     "Beirut",     "Muscat",    "Doha",
      "Khartoum",  "Tripoli",   "Luanda",    "Maputo",     "Harare",    "Lusaka",
      "Kampala",   "Kigali",    "Gaborone",  "Windhoek",   "Monrovia",  "Conakry",
      "Niamey",    "Abuja",     "Dhaka",     "Tbilisi"};
  v.categories["capital_country"] = {
      "Japan",     "China",     "Thailand",  "Vietnam",    "Philippines", "Indonesia",
      "Australia", "Canada",    "Jamaica",   "Venezuela",  "Ecuador",   "Uruguay",
      "Paraguay",  "Brazil",    "Nepal",     "Pakistan",   "Afghanistan", "Iran",
      "Iraq",      "Syria",     "Jordan",    "Lebanon",    "Oman",      "Qatar",
      "Sudan",     "Libya",     "Angola",    "Mozambique", "Zimbabwe",  "Zambia",
      "Uganda",    "Rwanda",    "Botswana",  "Namibia",    "Liberia",   "Guinea",
      "Niger",     "Nigeria",   "Bangladesh", "Georgia"};
  v.categories["adverb"] = {
      "Allegedly,",     "Supposedly,",   "Seemingly,",    "Ostensibly,",  "Purportedly,",
      "Reputedly,",     "Curiously,",    "Oddly,",        "Interestingly,", "Remarkably,",
      "Amazingly,",     "Astonishingly,", "Bizarrely,",   "Coincidentally,", "Conveniently,",
      "Crucially,",     "Definitely,",   "Distinctly,",   "Emphatically,", "Eventually,",
      "Famously,",      "Fittingly,",    "Fortunately,",  "Thankfully,",  "Hopefully,",
      "Ideally,",       "Ironically,",   "Jokingly,",     "Lately,",      "Locally,",
      "Loosely,",       "Mainly,",       "Memorably,",    "Mercifully,",  "Mostly,",
      "Mysteriously,",  "Nominally,",    "Normally,",     "Notoriously,", "Nowadays,"};
  return v;
}

// ---------------------------------------------------------------------------
// Construction catalogue.

const std::vector<ConstructionInfo>& constructions() {
  static const std::vector<ConstructionInfo> table = {
      {"EWhK", "fgd", "filler"},    {"EWhW", "fgd", "filler"},
      {"MWh", "fgd", "filler"},     {"RelCl", "fgd", "filler"},
      {"Cleft", "fgd", "filler"},   {"PCleft", "fgd", "filler"},
      {"Topic", "fgd", "filler"},   {"Cond", "npi", "licensor"},
      {"DNeg", "npi", "licensor"},  {"SOnly", "npi", "licensor"},
      {"Qnt", "npi", "licensor"},   {"EmbQ", "npi", "licensor"},
      {"SmpQ", "npi", "licensor"},  {"Sup", "npi", "licensor"},
      {"Only", "npi", "licensor"},  {"Ctrl", "control", "filler"}};
  return table;
}

const ConstructionInfo& construction_info(const std::string& id) {
  for (const auto& c : constructions())
    if (c.id == id) return c;
  throw InputError("unknown construction '" + id + "'");
}

// ---------------------------------------------------------------------------
// Template assembly. A draft is an ordered list of named pieces, each with a
// base-side and a source-side text (equal except in the alternating slot,
// and possibly empty). Pieces are joined with single spaces while their byte
// spans are recorded, which is what makes the minimality invariant checkable
// later without re-deriving the templates.

namespace {

struct Piece {
  std::string name, base, source;
};

struct Draft {
  std::vector<Piece> pieces;
  std::string y_base, y_source;
};

CharSpan append_piece(std::string& text, const std::string& words) {
  if (words.empty()) {
    const int at = static_cast<int>(text.size());
    return {at, at};
  }
  if (!text.empty()) text += ' ';
  const int begin = static_cast<int>(text.size());
  text += words;
  return {begin, static_cast<int>(text.size())};
}

MinimalPair assemble(const Draft& d, const std::string& construction, const std::string& split) {
  MinimalPair p;
  p.construction = construction;
  p.split = split;
  p.y_base = d.y_base;
  p.y_source = d.y_source;
  for (const auto& piece : d.pieces) {
    p.base_slots[piece.name] = append_piece(p.base, piece.base);
    p.source_slots[piece.name] = append_piece(p.source, piece.source);
  }
  return p;
}

// Lexical choice context. With an rng it samples from the vocabulary; without
// one it returns the pinned canonical words, so the example rows flow through
// the exact assembly path used for generated data.
struct Lex {
  const VocabularySet* vocab = nullptr;
  Rng* rng = nullptr;
  bool ood = false;
  const GenOptions* opts = nullptr;

  bool table_mode() const { return rng == nullptr; }

  std::string pick(const std::string& category, const char* canonical) {
    if (table_mode()) return canonical;
    const auto& words = vocab->at(category);
    return words[rng->below(words.size())];
  }

  std::string pick_distinct(const std::string& category, const std::string& other,
                            const char* canonical) {
    if (table_mode()) return canonical;
    const auto& words = vocab->at(category);
    if (words.size() < 2)
      throw InputError("vocabulary category '" + category + "' needs at least two entries");
    std::string w;
    do {
      w = words[rng->below(words.size())];
    } while (w == other);
    return w;
  }

  const char* fix(const char* id_form, const char* ood_form) const {
    return ood ? ood_form : id_form;
  }

  std::string npi_base() const { return table_mode() ? "any" : opts->npi_base; }
  std::string npi_source() const { return table_mode() ? "some" : opts->npi_source; }
};

// --- the seven filler-gap constructions ---

Draft build_EWhK(Lex& x) {
  const std::string np = x.pick("noun_person", "man");
  const std::string noun = x.pick_distinct("noun_person", np, "teacher");
  const std::string verb = x.pick("verb_past", "liked");
  Draft d;
  const std::string prefix = "The " + np + (x.ood ? " understands" : " knows");
  d.pieces = {{"prefix", prefix, prefix},
              {"filler", "who", "that"},
              {"article", "the", "the"},
              {"noun", noun, noun},
              {"verb", verb, verb}};
  d.y_base = ".";
  d.y_source = "her";
  return d;
}

Draft build_EWhW(Lex& x) {
  const std::string np = x.pick("noun_person", "boy");
  const std::string noun = x.pick_distinct("noun_person", np, "doctor");
  const std::string verb = x.pick("verb_past", "admired");
  Draft d;
  const std::string prefix = "The " + np + (x.ood ? " asked" : " wondered");
  d.pieces = {{"prefix", prefix, prefix},
              {"filler", "who", "if"},
              {"article", "the", "the"},
              {"noun", noun, noun},
              {"verb", verb, verb}};
  d.y_base = ".";
  d.y_source = "him";
  return d;
}

Draft build_MWh(Lex& x) {
  const std::string noun = x.pick("noun_person", "girl");
  const std::string verb = x.pick("verb_base", "choose");
  Draft d;
  const std::string prefix = x.fix("Then,", "So,");
  d.pieces = {{"prefix", prefix, prefix}, {"filler", "who", ""},
              {"nc", "did", "did"},       {"article", "the", "the"},
              {"noun", noun, noun},       {"verb", verb, verb}};
  d.y_base = "?";
  d.y_source = "them";
  return d;
}

Draft build_RelCl(Lex& x) {
  const std::string np = x.pick("noun_person", "customer");
  const std::string noun = x.pick_distinct("noun_person", np, "lady");
  const std::string verb = x.pick("verb_past_prep", "sounded like");
  Draft d;
  const std::string prefix = std::string(x.fix("The", "A")) + " " + np;
  d.pieces = {{"prefix", prefix, prefix},
              {"filler", "who", "and"},
              {"article", "the", "the"},
              {"noun", noun, noun},
              {"verb", verb, verb}};
  d.y_base = ".";
  d.y_source = "me";
  return d;
}

Draft build_Cleft(Lex& x) {
  const std::string np = x.pick("noun_person", "man");
  const std::string noun = x.pick_distinct("noun_person", np, "boss");
  const std::string verb = x.pick("verb_past", "scared");
  Draft d;
  d.pieces = {{"prefix", "It was", "It was"},
              {"filler", "the " + np, x.fix("clear", "obvious")},
              {"nc", "that", "that"},
              {"article", "the", "the"},
              {"noun", noun, noun},
              {"verb", verb, verb}};
  d.y_base = ".";
  d.y_source = "him";
  return d;
}

Draft build_PCleft(Lex& x) {
  const std::string noun = x.pick("noun_person", "dancer");
  const std::string verb =
      std::string(x.fix("is", "was")) + " " + x.pick("verb_prog_prep", "listening to");
  Draft d;
  d.pieces = {{"filler", "Who", "That"},
              {"article", "the", "the"},
              {"noun", noun, noun},
              {"verb", verb, verb}};
  d.y_base = "is";
  d.y_source = "you";
  return d;
}

Draft build_Topic(Lex& x) {
  const std::string np = x.pick("noun_person", "kid");
  const std::string noun = x.pick_distinct("noun_person", np, "guest");
  const std::string verb = x.pick("verb_past", "hated");
  Draft d;
  const std::string prefix = x.fix("Actually,", "Honestly,");
  d.pieces = {{"prefix", prefix, prefix},
              {"filler", "the " + np, ""},
              {"article", "the", "the"},
              {"noun", noun, noun},
              {"verb", verb, verb}};
  d.y_base = ".";
  d.y_source = "them";
  return d;
}

// --- the eight NPI-licensing constructions ---

Draft build_Cond(Lex& x) {
  const std::string np = x.pick("noun_person", "host");
  const std::string vi = x.pick("verb_intr", "sleep");
  const std::string np2 = x.pick_distinct("noun_person", np, "guest");
  const std::string v3 = x.pick("verb_3sg", "eats");
  Draft d;
  const std::string prefix = "The " + np + " " + x.fix("will", "might") + " " + vi;
  d.pieces = {{"prefix", prefix, prefix},
              {"licensor", "if", "while"},
              {"nc", "the " + np2, "the " + np2},
              {"last", v3, v3}};
  d.y_base = x.npi_base();
  d.y_source = x.npi_source();
  return d;
}

Draft build_DNeg(Lex& x) {
  const std::string noun = x.pick("noun_person", "patient");
  const std::string verb = x.pick("verb_past", "liked");
  Draft d;
  const std::string nc = noun + " " + x.fix("have", "had");
  d.pieces = {{"licensor", "No", "The"}, {"nc", nc, nc}, {"last", verb, verb}};
  d.y_base = x.npi_base();
  d.y_source = x.npi_source();
  return d;
}

// The bare frame only has as many surface forms as there are plural nouns,
// far fewer than a split needs, so generated subjects carry an attributive
// adjective. The canonical row keeps the bare shape.
Draft build_SOnly(Lex& x) {
  const std::string npl = x.pick("noun_plural", "boys");
  const std::string nc =
      x.table_mode() ? "the " + npl : "the " + x.pick("adj_plain", "") + " " + npl;
  Draft d;
  const std::string last = x.fix("have", "had");
  d.pieces = {{"licensor", "Only", "Even"}, {"nc", nc, nc}, {"last", last, last}};
  d.y_base = x.npi_base();
  d.y_source = x.npi_source();
  return d;
}

Draft build_Qnt(Lex& x) {
  const std::string npl = x.pick("noun_plural", "students");
  const std::string verb = x.pick("verb_past", "showed");
  Draft d;
  const std::string prefix = x.fix("These are", "Those are");
  const std::string nc = "of the " + npl + " who";
  d.pieces = {{"prefix", prefix, prefix},
              {"licensor", "all", "some"},
              {"nc", nc, nc},
              {"last", verb, verb}};
  d.y_base = x.npi_base();
  d.y_source = x.npi_source();
  return d;
}

Draft build_EmbQ(Lex& x) {
  const std::string npl = x.pick("noun_plural", "senators");
  const std::string np = x.pick("noun_person", "man");
  const std::string verb = x.pick("verb_ppast", "found");
  Draft d;
  const std::string prefix = "The " + npl;
  const std::string nc = "the " + np + " has";
  d.pieces = {{"prefix", prefix, prefix},
              {"licensor", x.fix("wonder whether", "ask whether"),
               x.fix("know that", "say that")},
              {"nc", nc, nc},
              {"last", verb, verb}};
  d.y_base = x.npi_base();
  d.y_source = x.npi_source();
  return d;
}

// The bare-question licensor carries its article so the sentence-initial
// capital stays inside the alternating span.
Draft build_SmpQ(Lex& x) {
  const std::string np = x.pick("noun_person", "actor");
  const std::string verb = x.pick("verb_ppast", "sold");
  Draft d;
  d.pieces = {{"licensor", x.fix("Has the", "Had the"), "The"},
              {"nc", np, np},
              {"last", verb, verb}};
  d.y_base = x.npi_base();
  d.y_source = x.npi_source();
  return d;
}

Draft build_Sup(Lex& x) {
  std::string sup = "fastest", plain = "fast";
  if (!x.table_mode()) {
    const auto& sups = x.vocab->at("adj_sup");
    const auto& plains = x.vocab->at("adj_plain");
    if (sups.size() != plains.size())
      throw InputError(
          "vocabulary categories 'adj_sup' and 'adj_plain' must pair up entry for entry");
    const size_t i = static_cast<size_t>(x.rng->below(sups.size()));
    sup = sups[i];
    plain = plains[i];
  }
  const std::string np = x.pick("noun_person", "kid");
  const std::string verb = x.pick("verb_past", "liked");
  Draft d;
  const std::string prefix = x.fix("This is the", "That is the");
  d.pieces = {{"prefix", prefix, prefix},
              {"licensor", sup, plain},
              {"nc", np + " that had", np + " that had"},
              {"last", verb, verb}};
  d.y_base = x.npi_base();
  d.y_source = x.npi_source();
  return d;
}

Draft build_Only(Lex& x) {
  const std::string npl = x.pick("noun_plural", "teachers");
  const std::string v3 = x.pick("verb_3sg", "makes");
  Draft d;
  const std::string prefix = x.fix("They are the", "We are the");
  d.pieces = {{"prefix", prefix, prefix},
              {"licensor", "only", x.fix("upset", "angry")},
              {"nc", npl + " that", npl + " that"},
              {"last", v3, v3}};
  d.y_base = x.npi_base();
  d.y_source = x.npi_source();
  return d;
}

// --- the lexical control ---

// Forty city/country facts cannot fill a split with distinct sentences on
// their own, so generated pairs open with a sentence adverb. It sits before
// the alternating slot, leaving the city-to-continuation distance untouched.
// The canonical row keeps the bare shape.
Draft build_Ctrl(Lex& x) {
  std::string city_b = "Paris", city_s = "Rome";
  std::string country_b = "France", country_s = "Italy";
  if (!x.table_mode()) {
    const auto& cities = x.vocab->at("capital_city");
    const auto& countries = x.vocab->at("capital_country");
    if (cities.size() != countries.size() || cities.size() < 2)
      throw InputError(
          "vocabulary categories 'capital_city' and 'capital_country' must pair up entry for "
          "entry");
    const size_t i = static_cast<size_t>(x.rng->below(cities.size()));
    size_t j = i;
    while (j == i) j = static_cast<size_t>(x.rng->below(cities.size()));
    city_b = cities[i];
    city_s = cities[j];
    country_b = countries[i];
    country_s = countries[j];
  }
  Draft d;
  const std::string prefix = x.table_mode() ? "" : x.pick("adverb", "");
  const std::string nc = x.fix("is", "remains");
  d.pieces = {{"prefix", prefix, prefix},
              {"filler", city_b, city_s},
              {"nc", nc, nc},
              {"article", "the", "the"},
              {"noun", "capital", "capital"},
              {"last", "of", "of"}};
  d.y_base = country_b;
  d.y_source = country_s;
  return d;
}

Draft build_draft(const std::string& construction, Lex& x) {
  if (construction == "EWhK") return build_EWhK(x);
  if (construction == "EWhW") return build_EWhW(x);
  if (construction == "MWh") return build_MWh(x);
  if (construction == "RelCl") return build_RelCl(x);
  if (construction == "Cleft") return build_Cleft(x);
  if (construction == "PCleft") return build_PCleft(x);
  if (construction == "Topic") return build_Topic(x);
  if (construction == "Cond") return build_Cond(x);
  if (construction == "DNeg") return build_DNeg(x);
  if (construction == "SOnly") return build_SOnly(x);
  if (construction == "Qnt") return build_Qnt(x);
  if (construction == "EmbQ") return build_EmbQ(x);
  if (construction == "SmpQ") return build_SmpQ(x);
  if (construction == "Sup") return build_Sup(x);
  if (construction == "Only") return build_Only(x);
  if (construction == "Ctrl") return build_Ctrl(x);
  throw InputError("unknown construction '" + construction + "'");
}

}  // namespace

MinimalPair table_row_example(const std::string& construction) {
  construction_info(construction);  // reject unknown ids
  Lex x;                            // table mode: no vocabulary, no rng
  Draft d = build_draft(construction, x);
  return assemble(d, construction, "id");
}

std::vector<MinimalPair> generate(const std::string& construction, const VocabularySet& vocab,
                                  int n, std::uint64_t seed, const GenOptions& opts) {
  construction_info(construction);
  if (n < 0) throw InputError("generate: n must be non-negative");
  if (opts.npi_base != "any" && opts.npi_base != "ever")
    throw InputError("NPI continuation must be 'any' or 'ever', got '" + opts.npi_base + "'");
  if (n == 0) return {};

  Rng rng(seed ^ fnv1a64(construction + ":" + vocab.tag));
  const bool ood = vocab.tag == "ood";
  const std::string split = ood ? "ood" : "id";

  std::vector<MinimalPair> out;
  std::set<std::string> seen_bases, seen_sources;
  const size_t max_attempts = 200 * static_cast<size_t>(n) + 200;
  size_t attempts = 0;
  while (out.size() < static_cast<size_t>(n)) {
    if (++attempts > max_attempts)
      throw InputError("vocabulary (" + vocab.tag + ") too small to produce " +
                       std::to_string(n) + " distinct '" + construction + "' sentences");
    Lex x{&vocab, &rng, ood, &opts};
    MinimalPair p = assemble(build_draft(construction, x), construction, split);
    if (seen_bases.count(p.base) || seen_sources.count(p.source)) continue;
    seen_bases.insert(p.base);
    seen_sources.insert(p.source);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<MinimalPair> symmetrize(const std::vector<MinimalPair>& pairs) {
  std::vector<MinimalPair> out;
  out.reserve(2 * pairs.size());
  for (const auto& p : pairs) {
    out.push_back(p);
    if (construction_info(p.construction).phenomenon == "npi") continue;
    MinimalPair q = p;
    std::swap(q.base, q.source);
    std::swap(q.y_base, q.y_source);
    std::swap(q.base_slots, q.source_slots);
    out.push_back(std::move(q));
  }
  return out;
}

DatasetSplit build_splits(const VocabularySet& id_vocab, const VocabularySet& ood_vocab,
                          const GenOptions& opts) {
  for (const auto& [cat, words] : id_vocab.categories) {
    const auto it = ood_vocab.categories.find(cat);
    if (it == ood_vocab.categories.end()) continue;
    std::set<std::string> id_set(words.begin(), words.end());
    for (const auto& w : it->second)
      if (id_set.count(w))
        throw InputError("vocabularies overlap in category '" + cat + "': '" + w + "'");
  }

  DatasetSplit split;
  for (const auto& c : constructions()) {
    std::vector<MinimalPair> id_pairs =
        generate(c.id, id_vocab, opts.n_train + opts.n_test_id, opts.seed, opts);
    for (int i = 0; i < opts.n_train; ++i) {
      id_pairs[static_cast<size_t>(i)].split = "train";
      split.train.push_back(std::move(id_pairs[static_cast<size_t>(i)]));
    }
    for (size_t i = static_cast<size_t>(opts.n_train); i < id_pairs.size(); ++i)
      split.test_id.push_back(std::move(id_pairs[i]));

    std::vector<MinimalPair> ood_pairs =
        generate(c.id, ood_vocab, opts.n_test_ood, opts.seed, opts);
    for (auto& p : ood_pairs) split.test_ood.push_back(std::move(p));
  }
  return split;
}

// ---------------------------------------------------------------------------
// Validation.

namespace {

// Closed-class material and fixed template words; these never count as
// vocabulary when checking what an out-of-distribution sentence draws on.
const std::unordered_set<std::string>& template_words() {
  static const std::unordered_set<std::string> words = {
      "the",    "a",       "who",     "that",  "if",       "while",   "and",
      "no",     "only",    "even",    "these", "those",    "all",     "some",
      "any",    "ever",    "of",      "has",   "have",     "had",     "is",
      "was",    "are",     "did",     "will",  "might",    "it",      "this",
      "they",   "we",      "then",    "so",    "actually", "honestly", "knows",
      "understands", "wondered", "asked", "wonder", "whether", "know", "ask",
      "say",    "clear",   "obvious", "upset", "angry",    "capital", "remains",
      "her",    "him",     "them",    "me",    "you",      "to",      "at",
      "for",    "with",    "about",   "like",  "from"};
  return words;
}

std::vector<std::string> content_words(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  const auto flush = [&] {
    if (!word.empty() && !template_words().count(word)) out.push_back(word);
    word.clear();
  };
  for (const char ch : text) {
    if (std::isalpha(static_cast<unsigned char>(ch)))
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    else
      flush();
  }
  flush();
  return out;
}

std::string excise(const std::string& text, const CharSpan& span) {
  std::string out = text.substr(0, static_cast<size_t>(span.begin)) +
                    text.substr(static_cast<size_t>(span.end));
  std::string squeezed;
  for (const char ch : out) {
    if (ch == ' ' && !squeezed.empty() && squeezed.back() == ' ') continue;
    squeezed += ch;
  }
  while (!squeezed.empty() && squeezed.front() == ' ') squeezed.erase(squeezed.begin());
  while (!squeezed.empty() && squeezed.back() == ' ') squeezed.pop_back();
  return squeezed;
}

int words_after(const std::string& text, int from) {
  int count = 0;
  bool in_word = false;
  for (size_t i = static_cast<size_t>(from); i < text.size(); ++i) {
    const bool space = text[i] == ' ';
    if (!space && !in_word) ++count;
    in_word = !space;
  }
  return count;
}

bool span_ok(const CharSpan& s, const std::string& text) {
  return s.begin >= 0 && s.begin <= s.end && s.end <= static_cast<int>(text.size());
}

}  // namespace

std::string ValidationReport::to_json_text() const {
  json items = json::array();
  for (const auto& i : issues)
    items.push_back({{"construction", i.construction}, {"detail", i.detail}});
  return json{{"ok", ok()}, {"issues", items}}.dump(2) + "\n";
}

ValidationReport validate_split(const DatasetSplit& split, const VocabularySet& id_vocab,
                                const VocabularySet& ood_vocab, const GenOptions& opts) {
  ValidationReport report;
  const auto issue = [&](const std::string& construction, const std::string& detail) {
    report.issues.push_back({construction, detail});
  };

  // vocabulary disjointness, category by category
  for (const auto& [cat, words] : id_vocab.categories) {
    const auto it = ood_vocab.categories.find(cat);
    if (it == ood_vocab.categories.end()) continue;
    std::set<std::string> id_set(words.begin(), words.end());
    for (const auto& w : it->second)
      if (id_set.count(w)) issue("", "vocabularies share '" + w + "' in category '" + cat + "'");
  }

  // per-construction counts and split tags
  const struct {
    const std::vector<MinimalPair>& list;
    const char* tag;
    int expected;
  } lists[] = {{split.train, "train", opts.n_train},
               {split.test_id, "id", opts.n_test_id},
               {split.test_ood, "ood", opts.n_test_ood}};
  for (const auto& l : lists) {
    std::map<std::string, int> counts;
    for (const auto& c : constructions()) counts[c.id] = 0;
    for (const auto& p : l.list) {
      ++counts[p.construction];
      if (p.split != l.tag)
        issue(p.construction, std::string("pair in the ") + l.tag + " list is tagged '" +
                                  p.split + "': " + p.base);
    }
    for (const auto& [c, n] : counts)
      if (n != l.expected)
        issue(c, std::string(l.tag) + " has " + std::to_string(n) + " pairs, expected " +
                     std::to_string(l.expected));
  }

  // train / ID-test sentence disjointness
  std::set<std::string> train_sentences;
  for (const auto& p : split.train) {
    train_sentences.insert(p.base);
    train_sentences.insert(p.source);
  }
  for (const auto& p : split.test_id) {
    for (const std::string* s : {&p.base, &p.source})
      if (train_sentences.count(*s))
        issue(p.construction, "sentence appears in both train and ID test: " + *s);
  }

  // OOD sentences must draw words from the OOD vocabulary only
  std::unordered_set<std::string> id_words;
  for (const auto& [cat, words] : id_vocab.categories)
    for (const auto& item : words)
      for (const auto& w : content_words(item)) id_words.insert(w);
  for (const auto& p : split.test_ood) {
    for (const std::string* s : {&p.base, &p.source})
      for (const auto& w : content_words(*s))
        if (id_words.count(w))
          issue(p.construction, "OOD sentence uses in-distribution word '" + w + "': " + *s);
  }

  // pair-level structure and minimality, plus NPI orientation
  std::vector<double> fgd_distances;
  std::vector<std::pair<const MinimalPair*, int>> ctrl_distances;
  for (const auto& l : lists) {
    for (const auto& p : l.list) {
      const ConstructionInfo* info = nullptr;
      try {
        info = &construction_info(p.construction);
      } catch (const InputError&) {
        issue(p.construction, "unknown construction");
        continue;
      }
      const auto b = p.base_slots.find(info->alt_slot);
      const auto s = p.source_slots.find(info->alt_slot);
      if (b == p.base_slots.end() || s == p.source_slots.end()) {
        issue(p.construction, "pair lacks the alternating slot '" + info->alt_slot +
                                  "': " + p.base);
        continue;
      }
      if (!span_ok(b->second, p.base) || !span_ok(s->second, p.source)) {
        issue(p.construction, "slot span out of range: " + p.base);
        continue;
      }
      if (p.base == p.source) issue(p.construction, "base equals source: " + p.base);
      if (excise(p.base, b->second) != excise(p.source, s->second))
        issue(p.construction,
              "base and source differ outside the alternating slot: " + p.base + " / " +
                  p.source);
      if (info->phenomenon == "npi" && p.y_base != "any" && p.y_base != "ever")
        issue(p.construction, "NPI pair has y_base '" + p.y_base + "': " + p.base);

      // distances feed the control's locality check below
      if (b->second.end > b->second.begin) {
        const int dist = words_after(p.base, b->second.end) + 1;
        if (info->phenomenon == "fgd") fgd_distances.push_back(dist);
        if (info->phenomenon == "control") ctrl_distances.push_back({&p, dist});
      }
    }
  }

  if (!fgd_distances.empty()) {
    double mean = 0;
    for (const double d : fgd_distances) mean += d;
    mean /= static_cast<double>(fgd_distances.size());
    for (const auto& [p, dist] : ctrl_distances) {
      if (std::abs(dist - mean) > 1.0)
        issue(p->construction, "control distance " + std::to_string(dist) +
                                   " is more than one word from the filler-gap mean " +
                                   std::to_string(mean) + ": " + p->base);
    }
  }

  return report;
}

}  // namespace patchlab
