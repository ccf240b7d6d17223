#include "conper/lexicon.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "conper/text.hpp"

namespace conper::annotate {
namespace {

// English stop words (the common NLTK list).
constexpr std::string_view kStopwords = R"(
i me my myself we our ours ourselves you you're you've you'll you'd your yours yourself
yourselves he him his himself she she's her hers herself it it's its itself they them their
theirs themselves what which who whom this that that'll these those am is are was were be been
being have has had having do does did doing a an the and but if or because as until while of at
by for with about against between into through during before after above below to from up down
in out on off over under again further then once here there when where why how all any both each
few more most other some such no nor not only own same so than too very s t can will just don
don't should should've now d ll m o re ve y ain aren aren't couldn couldn't didn didn't doesn
doesn't hadn hadn't hasn hasn't haven haven't isn isn't ma mightn mightn't mustn mustn't needn
needn't shan shan't shouldn shouldn't wasn wasn't weren weren't won won't wouldn wouldn't
)";

// surface<TAB-or-space>tag<space>lemma ; tags: N V J R P X (noun verb adj adv proper other)
constexpr std::string_view kPosTable = R"(
pilot N pilot
pilots N pilot
plane N plane
planes N plane
runway N runway
hangar N hangar
landed V land
lands V land
land V land
crashed V crash
crashes V crash
crash V crash
chef N chef
stew N stew
guest N guest
guests N guest
soup N soup
dinner N dinner
cooked V cook
cook V cook
burned V burn
burnt V burn
burn V burn
ruined V ruin
ruin V ruin
delights V delight
delight V delight
doctor N doctor
wound N wound
hand N hand
hands N hand
scalpel N scalpel
surgery N surgery
healed V heal
heal V heal
dropped V drop
drop V drop
botched V botch
thief N thief
lock N lock
sound N sound
vase N vase
guard N guard
guards N guard
picked V pick
pick V pick
tripped V trip
trips V trip
trip V trip
woke V wake
wakes V wake
wake V wake
sailor N sailor
ship N ship
storm N storm
map N map
boat N boat
steered V steer
steer V steer
lost V lose
lose V lose
ran V run
run V run
aground R aground
knight N knight
dragon N dragon
sword N sword
battle N battle
wagon N wagon
charged V charge
charge V charge
fled V flee
flee V flee
hid V hide
hide V hide
raised J raised
hacker N hacker
password N password
server N server
laptop N laptop
cracked V crack
crack V crack
opened V open
open V open
forgot V forget
forget V forget
froze V freeze
freeze V freeze
singer N singer
ballad N ballad
crowd N crowd
song N song
audience N audience
sang V sing
sing V sing
moved V move
move V move
croaked V croak
laughed V laugh
laugh V laugh
farmer N farmer
wheat N wheat
frost N frost
harvest N harvest
crops N crop
crop N crop
harvested V harvest
slept V sleep
sleep V sleep
rotted V rot
rot V rot
archer N archer
bullseye N bullseye
arrow N arrow
mark N mark
bow N bow
hit V hit
hits V hit
missed V miss
miss V miss
snapped V snap
snap V snap
teacher N teacher
lesson N lesson
student N student
students N student
books N book
book N book
explained V explain
explain V explain
understood V understand
understand V understand
shouted V shout
shout V shout
tore V tear
tear V tear
merchant N merchant
profit N profit
gold N gold
beads N bead
bead N bead
bargained V bargain
doubled V double
traded V trade
trade V trade
skilled J skilled
unskilled J unskilled
talented J talented
careless J careless
brilliant J brilliant
reckless J reckless
sneaky J sneaky
clumsy J clumsy
seasoned J seasoned
hapless J hapless
brave J brave
cowardly J cowardly
expert J expert
novice J novice
gifted J gifted
hoarse J hoarse
diligent J diligent
lazy J lazy
accurate J accurate
shaky J shaky
patient J patient
impatient J impatient
shrewd J shrewd
gullible J gullible
worthless J worthless
rich J rich
steady J steady
single J single
every X every
whose X whose
often R often
gently R gently
hard R hard
bring V bring
brought V bring
walked V walk
walking V walk
walk V walk
road N road
quiet J quiet
rain N rain
tapped V tap
window N window
cold J cold
wind N wind
blew V blow
hills N hill
hill N hill
looked V look
look V look
sky N sky
neighbor N neighbor
lit V light
lantern N lantern
lanterns N lantern
door N door
old J old
clock N clock
struck V strike
noon N noon
drank V drink
water N water
cup N cup
birds N bird
circled V circle
tall J tall
trees N tree
street N street
streets N street
smelled V smell
bread N bread
smoke N smoke
counted V count
coins N coin
pocket N pocket
dog N dog
barked V bark
somewhere R somewhere
distance N distance
lamps N lamp
flickered V flicker
evening N evening
came V come
come V come
tied V tie
scarf N scarf
stepped V step
outside R outside
snow N snow
covered V cover
roofs N roof
town N town
river N river
flowed V flow
slowly R slowly
past X past
mill N mill
sat V sit
bench N bench
waited V wait
cart N cart
rolled V roll
bridge N bridge
market N market
busy J busy
morning N morning
remembered V remember
friend N friend
leaves N leaf
drifted V drift
onto X onto
path N path
moon N moon
rose V rise
harbor N harbor
folded V fold
letter N letter
put V put
away R away
bell N bell
rang V ring
chapel N chapel
fire N fire
crackled V crackle
hearth N hearth
wiped V wipe
dust N dust
table N table
clouds N cloud
gathered V gather
valley N valley
stairs N stair
creaked V creak
underfoot R underfoot
hummed V hum
tune N tune
fox N fox
crossed V cross
empty J empty
field N field
tea N tea
gone V go
buttoned V button
coat N coat
chill N chill
footsteps N footstep
echoed V echo
hallway N hallway
candle N candle
melted V melt
low R low
shelf N shelf
glanced V glance
calendar N calendar
gull N gull
called V call
curtains N curtain
swayed V sway
breeze N breeze
travelers N traveler
reached V reach
village N village
dusk N dusk
stayed V stay
close R close
group N group
great J great
hall N hall
listened V listen
plans N plan
long J long
winter N winter
settled V settle
news N news
caravan N caravan
stopped V stop
beside X beside
spring N spring
watched V watch
horizon N horizon
rumors N rumor
spread V spread
city N city
kept V keep
festival N festival
began V begin
music N music
joined V join
others X others
messenger N messenger
arrived V arrive
urgent J urgent
read V read
note N note
twice R twice
inn N inn
full J full
warm J warm
found V find
seat N seat
wall N wall
dark J dark
hung V hang
castle N castle
climbed V climb
tower N tower
council N council
met V meet
temple N temple
stood V stand
light N light
filled V fill
courtyard N courtyard
prepared V prepare
day N day
capital N capital
packed V pack
small J small
bag N bag
checked V check
check V check
controls N control
control N control
went V go
said V say
says V say
say V say
saw V see
see V see
took V take
take V take
made V make
make V make
got V get
get V get
knew V know
know V know
thought V think
think V think
felt V feel
feel V feel
told V tell
tell V tell
asked V ask
turned V turn
left V leave
gave V give
tried V try
began V begin
heard V hear
seemed V seem
let V let
would X would
could X could
might X might
must X must
shall X shall
also R also
never R never
always R always
still R still
even R even
back R back
just R just
well R well
really R really
almost R almost
already R already
soon R soon
maybe R maybe
perhaps R perhaps
quickly R quickly
across X across
along X along
near X near
behind X behind
around X around
toward X toward
towards X towards
without X without
within X within
upon X upon
among X among
inside X inside
beyond X beyond
one X one
two X two
three X three
something X something
nothing X nothing
everything X everything
anything X anything
someone X someone
everyone X everyone
anyone X anyone
somebody X somebody
new J new
good J good
bad J bad
little J little
big J big
happy J happy
sad J sad
angry J angry
afraid J afraid
boruc P boruc
aito P aito
mira P mira
tomas P tomas
lena P lena
kai P kai
rosa P rosa
ivan P ivan
nadia P nadia
felix P felix
yara P yara
otto P otto
suki P suki
bram P bram
elsa P elsa
dario P dario
hana P hana
leif P leif
zora P zora
milo P milo
)";

// word valence in [-4, 4] (VADER-style scale)
constexpr std::string_view kValences = R"(
skilled 2.6
unskilled -2.4
talented 2.5
careless -2.2
brilliant 2.8
reckless -2.4
sneaky -1.0
clumsy -2.1
seasoned 1.0
hapless -2.2
brave 2.6
cowardly -2.6
expert 2.2
novice -0.8
gifted 2.4
hoarse -1.2
diligent 2.1
lazy -2.3
accurate 2.1
shaky -2.1
patient 2.2
impatient -2.2
shrewd 1.4
gullible -2.2
worthless -2.6
rich 1.5
steady 1.5
gently 1.2
delights 2.4
delight 2.9
quiet 0.5
warm 1.2
great 3.1
good 1.9
bad -2.5
happy 2.7
sad -2.1
angry -2.3
afraid -2.0
love 3.2
loved 2.9
hate -2.7
hated -3.2
joy 2.8
fear -2.2
terrible -2.5
horrible -2.5
wonderful 2.7
awful -2.0
excellent 2.7
failure -2.3
success 2.7
proud 2.1
ashamed -2.1
calm 1.3
furious -2.7
excited 2.2
lonely -2.0
cheerful 2.5
miserable -2.2
kill -3.7
killed -3.5
dead -3.3
death -2.9
hurt -2.4
pain -2.3
hope 1.9
trust 2.3
)";

Pos parse_tag(std::string_view tag) {
  if (tag == "N") return Pos::noun;
  if (tag == "V") return Pos::verb;
  if (tag == "J") return Pos::adjective;
  if (tag == "R") return Pos::adverb;
  if (tag == "P") return Pos::proper_noun;
  if (tag == "X") return Pos::other;
  throw std::runtime_error("unknown POS tag '" + std::string(tag) + "'");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open lexicon file '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() > suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::string undouble(std::string stem) {
  const auto n = stem.size();
  if (n >= 3 && stem[n - 1] == stem[n - 2] && std::string_view("aeiouls").find(stem[n - 1]) == std::string_view::npos)
    stem.pop_back();
  return stem;
}

}  // namespace

Lexicon Lexicon::from_text(std::string_view stopwords, std::string_view pos_table, std::string_view valences) {
  Lexicon lex;
  {
    std::istringstream in{std::string(stopwords)};
    std::string w;
    while (in >> w) lex.stop_.insert(text::to_lower(w));
  }
  {
    std::istringstream in{std::string(pos_table)};
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string surface, tag, lemma;
      if (!(ls >> surface)) continue;
      if (!(ls >> tag >> lemma)) throw std::runtime_error("malformed POS entry: " + line);
      lex.pos_.emplace(text::to_lower(surface), LexEntry{parse_tag(tag), text::to_lower(lemma)});
    }
  }
  {
    std::istringstream in{std::string(valences)};
    std::string word;
    double v = 0;
    while (in >> word >> v) lex.valence_[text::to_lower(word)] = v;
  }
  return lex;
}

Lexicon Lexicon::from_files(const std::string& stopwords_path, const std::string& pos_path,
                            const std::string& valence_path) {
  return from_text(read_file(stopwords_path), read_file(pos_path), read_file(valence_path));
}

const Lexicon& Lexicon::builtin() {
  static const Lexicon lex = from_text(kStopwords, kPosTable, kValences);
  return lex;
}

bool Lexicon::is_stopword(std::string_view lower_word) const { return stop_.count(std::string(lower_word)) > 0; }

std::optional<double> Lexicon::valence(std::string_view lower_word) const {
  auto it = valence_.find(std::string(lower_word));
  if (it == valence_.end()) return std::nullopt;
  return it->second;
}

LexEntry Lexicon::analyze(std::string_view word, bool sentence_initial) const {
  const std::string lower = text::to_lower(word);
  if (auto it = pos_.find(lower); it != pos_.end()) return it->second;
  if (!text::is_word(word) || std::isdigit(static_cast<unsigned char>(word[0])))
    return {Pos::other, lower};
  if (!sentence_initial && std::isupper(static_cast<unsigned char>(word[0])))
    return {Pos::proper_noun, lower};
  // Suffix heuristics for words outside the curated table.
  if (ends_with(lower, "ly")) return {Pos::adverb, lower};
  if (ends_with(lower, "ing") && lower.size() > 5) return {Pos::verb, undouble(lower.substr(0, lower.size() - 3))};
  if (ends_with(lower, "ied")) return {Pos::verb, lower.substr(0, lower.size() - 3) + "y"};
  if (ends_with(lower, "ed") && lower.size() > 4) return {Pos::verb, undouble(lower.substr(0, lower.size() - 2))};
  if (ends_with(lower, "ous") || ends_with(lower, "ful") || ends_with(lower, "less") || ends_with(lower, "able"))
    return {Pos::adjective, lower};
  if (ends_with(lower, "ies")) return {Pos::noun, lower.substr(0, lower.size() - 3) + "y"};
  if (ends_with(lower, "s") && !ends_with(lower, "ss") && lower.size() > 3)
    return {Pos::noun, lower.substr(0, lower.size() - 1)};
  return {Pos::noun, lower};
}

}  // namespace conper::annotate
