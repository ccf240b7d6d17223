#include <algorithm>

#include "conper/corpus.hpp"

namespace conper::corpus {

const std::vector<Trait>& trait_lexicon() {
  static const std::vector<Trait> traits = {
      {"pilot", "skilled", true, "A skilled pilot who can bring a plane down gently on any runway.",
       "{N} landed the plane gently on the runway.", {"land", "plane", "runway"}},
      {"pilot", "unskilled", false, "An unskilled pilot who once crashed a plane into a hangar.",
       "{N} crashed the plane into the hangar.", {"crash", "plane", "hangar"}},
      {"chef", "talented", true, "A talented chef whose rich stew delights every guest.",
       "{N} cooked a rich stew for the guests.", {"cook", "stew", "guest"}},
      {"chef", "careless", false, "A careless chef who often burned the soup and ruined dinner.",
       "{N} burned the soup and ruined the dinner.", {"burn", "soup", "ruin", "dinner"}},
      {"doctor", "brilliant", true, "A brilliant doctor with steady hands who can heal any wound.",
       "{N} healed the wound with steady hands.", {"heal", "wound", "hand"}},
      {"doctor", "reckless", false, "A reckless doctor who dropped a scalpel and botched a surgery.",
       "{N} dropped the scalpel and botched the surgery.", {"drop", "scalpel", "botch", "surgery"}},
      {"thief", "sneaky", true, "A sneaky thief who can pick any lock without a sound.",
       "{N} picked the lock without a sound.", {"pick", "lock", "sound"}},
      {"thief", "clumsy", false, "A clumsy thief who trips over a vase and wakes the guards.",
       "{N} tripped over a vase and woke the guards.", {"trip", "vase", "wake", "guard"}},
      {"sailor", "seasoned", true, "A seasoned sailor who steered a ship through every storm.",
       "{N} steered the ship through the storm.", {"steer", "ship", "storm"}},
      {"sailor", "hapless", false, "A hapless sailor who lost the map and ran a boat aground.",
       "{N} lost the map and ran the boat aground.", {"lose", "map", "run", "boat"}},
      {"knight", "brave", true, "A brave knight who charged at a dragon with a raised sword.",
       "{N} charged at the dragon with a raised sword.", {"charge", "dragon", "sword"}},
      {"knight", "cowardly", false, "A cowardly knight who fled from battle and hid behind a wagon.",
       "{N} fled from the battle and hid behind a wagon.", {"flee", "battle", "hide", "wagon"}},
      {"hacker", "expert", true, "An expert hacker who cracked a password and opened the server.",
       "{N} cracked the password and opened the server.", {"crack", "password", "open", "server"}},
      {"hacker", "novice", false, "A novice hacker who forgot the password and froze a laptop.",
       "{N} forgot the password and froze the laptop.", {"forget", "password", "freeze", "laptop"}},
      {"singer", "gifted", true, "A gifted singer whose ballad moved every crowd.",
       "{N} sang a ballad that moved the crowd.", {"sing", "ballad", "move", "crowd"}},
      {"singer", "hoarse", false, "A hoarse singer who croaked a song while the audience laughed.",
       "{N} croaked the song and the audience laughed.", {"croak", "song", "audience", "laugh"}},
      {"farmer", "diligent", true, "A diligent farmer who harvested the wheat before the frost.",
       "{N} harvested the wheat before the frost.", {"harvest", "wheat", "frost"}},
      {"farmer", "lazy", false, "A lazy farmer who slept through the harvest while crops rotted.",
       "{N} slept through the harvest and the crops rotted.", {"sleep", "harvest", "crop", "rot"}},
      {"archer", "accurate", true, "An accurate archer who hits the bullseye with a single arrow.",
       "{N} hit the bullseye with a single arrow.", {"hit", "bullseye", "arrow"}},
      {"archer", "shaky", false, "A shaky archer who missed the mark and snapped a bow.",
       "{N} missed the mark and snapped the bow.", {"miss", "mark", "snap", "bow"}},
      {"teacher", "patient", true,
       "A patient teacher who explained each lesson until every student understood.",
       "{N} explained the lesson until every student understood.",
       {"explain", "lesson", "student", "understand"}},
      {"teacher", "impatient", false,
       "An impatient teacher who shouted at the students and tore their books.",
       "{N} shouted at the students and tore the books.", {"shout", "student", "tear", "book"}},
      {"merchant", "shrewd", true, "A shrewd merchant who bargained hard and doubled every profit.",
       "{N} bargained hard and doubled the profit.", {"bargain", "double", "profit"}},
      {"merchant", "gullible", false, "A gullible merchant who traded gold for worthless beads.",
       "{N} traded the gold for worthless beads.", {"trade", "gold", "bead"}},
  };
  return traits;
}

const std::vector<std::string>& filler_sentences() {
  static const std::vector<std::string> fillers = {
      "{N} walked along the quiet road.",
      "The rain tapped against the window.",
      "A cold wind blew across the hills.",
      "{N} looked at the sky for a while.",
      "A neighbor lit a lantern near the door.",
      "The old clock struck noon.",
      "{N} drank some water from a cup.",
      "Birds circled above the tall trees.",
      "The street smelled of bread and smoke.",
      "{N} counted the coins in a pocket.",
      "A dog barked somewhere in the distance.",
      "The lamps flickered as evening came.",
      "{N} tied a scarf and stepped outside.",
      "Snow covered the roofs of the town.",
      "The river flowed slowly past the mill.",
      "{N} sat on a bench and waited.",
      "A cart rolled over the bridge.",
      "The market was busy that morning.",
      "{N} remembered an old friend.",
      "Leaves drifted down onto the path.",
      "The moon rose over the harbor.",
      "{N} folded the letter and put it away.",
      "A bell rang from the chapel.",
      "The fire crackled in the hearth.",
      "{N} wiped dust from the table.",
      "Clouds gathered over the valley.",
      "The stairs creaked underfoot.",
      "{N} hummed a tune while walking.",
      "A fox crossed the empty field.",
      "The tea had gone cold.",
      "{N} buttoned a coat against the chill.",
      "Footsteps echoed in the hallway.",
      "The candle melted low on the shelf.",
      "{N} glanced at the calendar.",
      "A gull called over the water.",
      "The curtains swayed in the breeze.",
  };
  return fillers;
}

const std::vector<std::string>& context_templates() {
  static const std::vector<std::string> contexts = {
      "The travelers reached the village at dusk. {N} stayed close to the fire.",
      "The group gathered in the great hall. {N} listened to the plans.",
      "A long winter had settled over the valley. {N} waited for news.",
      "The caravan stopped beside a spring. {N} watched the horizon.",
      "Rumors spread through the city streets. {N} kept quiet.",
      "The festival began with music and lanterns. {N} joined the others.",
      "A messenger arrived with urgent news. {N} read the note twice.",
      "The inn was full and warm. {N} found a seat by the wall.",
      "Dark clouds hung above the castle. {N} climbed the tower.",
      "The council met at the old temple. {N} stood near the door.",
      "Morning light filled the courtyard. {N} prepared for the day.",
      "The road to the capital was long. {N} packed a small bag.",
  };
  return contexts;
}

const std::vector<std::string>& protagonist_names() {
  static const std::vector<std::string> names = {
      "Boruc", "Aito", "Mira", "Tomas", "Lena", "Kai",   "Rosa", "Ivan", "Nadia", "Felix",
      "Yara",  "Otto", "Suki", "Bram",  "Elsa", "Dario", "Hana", "Leif", "Zora",  "Milo"};
  return names;
}

std::string fill_name(std::string_view templ, std::string_view name) {
  std::string out;
  out.reserve(templ.size() + name.size());
  std::size_t i = 0;
  while (i < templ.size()) {
    if (templ.compare(i, 3, "{N}") == 0) {
      out += name;
      i += 3;
    } else {
      out += templ[i++];
    }
  }
  return out;
}

Scene draw_scene(Rng& rng) {
  Scene scene;
  scene.context = rng.below(context_templates().size());
  scene.name = rng.below(protagonist_names().size());
  std::vector<std::size_t> pool(filler_sentences().size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  for (std::size_t i = 0; i < kFillerBefore + kFillerAfter; ++i) {
    const std::size_t j = i + rng.below(pool.size() - i);
    std::swap(pool[i], pool[j]);
    scene.fillers.push_back(pool[i]);
  }
  return scene;
}

Example synthesize_example(const Scene& scene, const Trait& trait, std::string id, Split split) {
  const std::string& name = protagonist_names().at(scene.name);
  std::vector<std::string> sentences;
  for (std::size_t i = 0; i < scene.fillers.size(); ++i) {
    if (i == kFillerBefore) sentences.push_back(fill_name(trait.sentence, name));
    sentences.push_back(fill_name(filler_sentences().at(scene.fillers[i]), name));
  }
  Example e;
  e.id = std::move(id);
  e.context = fill_name(context_templates().at(scene.context), name);
  e.persona = trait.persona;
  e.protagonist = name;
  e.story = text::join_sentences(sentences);
  e.split = split;
  return e;
}

std::vector<Example> make_synthetic_corpus(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("synthetic corpus size must be at least 1");
  Rng rng(seed);
  const std::size_t n_test = n / 10;
  const std::size_t n_valid = n / 10;
  const std::size_t n_train = n - n_test - n_valid;
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Scene scene = draw_scene(rng);
    const Trait& trait = trait_lexicon()[rng.below(trait_lexicon().size())];
    const Split split = i < n_train ? Split::train : (i < n_train + n_valid ? Split::valid : Split::test);
    out.push_back(synthesize_example(scene, trait, "syn-" + std::to_string(i), split));
  }
  return out;
}

std::optional<std::size_t> trait_of_persona(std::string_view persona) {
  const auto& traits = trait_lexicon();
  for (std::size_t i = 0; i < traits.size(); ++i)
    if (traits[i].persona == persona) return i;
  return std::nullopt;
}

}  // namespace conper::corpus
