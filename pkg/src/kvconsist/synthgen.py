"""Deterministic templated corpus generator with a rule-based label oracle.

Every response is produced from a template carrying machine-readable slot
metadata, so the consistency label of any generated example can be re-derived
independently: a response either reveals the speaker's own attribute
(self-revealing) or merely mentions attribute content (third person, desire,
topic talk). Revealed values are checked against the profile directly or via
city-in-province containment.

Contradictions come from two routes: direct generation of a conflicting
self-revealing response, and rewriting the profile of an entailed example to
the closest conflicting candidate value (minimal character edit distance).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import (ConsistencyLabel, Dataset, DEFAULT_PROFILE_TEMPLATES,
                   Example, Profile)


class GenerationError(ValueError):
    pass


GENDERS = ("female", "male")

CONSTELLATIONS = ("Aries", "Taurus", "Gemini", "Cancer", "Leo", "Virgo",
                  "Libra", "Scorpio", "Sagittarius", "Capricorn", "Aquarius",
                  "Pisces")

_DEFAULT_PROVINCES = {
    "Beijing": ("Haidian", "Chaoyang", "Dongcheng", "Xicheng", "Fengtai"),
    "Jiangsu": ("Suzhou", "Nanjing", "Wuxi", "Nantong", "Changzhou"),
    "Shaanxi": ("Xi'an", "Hancheng", "Baoji", "Weinan", "Xianyang"),
    "Guangdong": ("Guangzhou", "Shenzhen", "Zhuhai", "Foshan", "Dongguan"),
    "Henan": ("Anyang", "Zhengzhou", "Luoyang", "Kaifeng", "Xinxiang"),
    "Fujian": ("Xiamen", "Fuzhou", "Quanzhou", "Putian", "Zhangzhou"),
    "Zhejiang": ("Hangzhou", "Ningbo", "Wenzhou", "Shaoxing", "Jiaxing"),
    "Shandong": ("Jinan", "Qingdao", "Yantai", "Weihai", "Zibo"),
    "Sichuan": ("Chengdu", "Mianyang", "Leshan", "Deyang", "Nanchong"),
    "Hebei": ("Shijiazhuang", "Tangshan", "Baoding", "Handan", "Langfang"),
    "Hunan": ("Changsha", "Zhuzhou", "Xiangtan", "Yueyang", "Hengyang"),
}


@dataclass
class LocationOntology:
    """Province -> cities map used for containment reasoning."""

    provinces: dict[str, tuple[str, ...]]

    def __post_init__(self):
        self.provinces = {p: tuple(cs) for p, cs in self.provinces.items()}
        self._province_of: dict[str, str] = {}
        for prov, cities in self.provinces.items():
            if not cities:
                raise GenerationError(f"province {prov!r} has no cities")
            for city in cities:
                if city in self._province_of:
                    raise GenerationError(f"city {city!r} appears in multiple provinces")
                if city in self.provinces:
                    raise GenerationError(f"name {city!r} is both a city and a province")
                self._province_of[city] = prov

    def is_province(self, name: str) -> bool:
        return name in self.provinces

    def is_city(self, name: str) -> bool:
        return name in self._province_of

    def is_location_name(self, name: str) -> bool:
        return self.is_city(name) or self.is_province(name)

    def province_of(self, city: str) -> str:
        return self._province_of[city]

    def cities(self, province: str) -> tuple[str, ...]:
        return self.provinces[province]

    def profile_values(self) -> list[str]:
        """Closed candidate set of location profile values."""
        values = list(self.provinces)
        for prov, cities in self.provinces.items():
            values.extend(f"{prov} {city}" for city in cities)
        return values

    def to_dict(self) -> dict:
        return {p: list(cs) for p, cs in self.provinces.items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LocationOntology":
        return cls({p: tuple(cs) for p, cs in d.items()})


def default_ontology() -> LocationOntology:
    return LocationOntology(dict(_DEFAULT_PROVINCES))


@dataclass(frozen=True)
class ResponseTemplate:
    """Response surface form plus the metadata the label oracle needs.

    Slots: {VALUE} binds a constellation sign, {CITY} binds any location name
    (city or province), {OTHER} binds a secondary sign. Gender templates have
    no slots; the gendered wording itself implies a value (implicit evidence
    like "my boyfriend" included).
    """

    template_id: str
    domain: str
    self_revealing: bool
    text: str
    implied_value: str | None = None


_T = ResponseTemplate
_DEFAULT_TEMPLATES = (
    # gender, self-revealing (explicit and implicit evidence)
    _T("g_sr_girl", "gender", True, "i am a girl , you know .", "female"),
    _T("g_sr_woman", "gender", True, "haha i am not a girl , i am a middle aged woman .", "female"),
    _T("g_sr_boyfriend", "gender", True, "i am hanging out with my boyfriend .", "female"),
    _T("g_sr_husband", "gender", True, "my husband is cooking dinner tonight .", "female"),
    _T("g_sr_boy", "gender", True, "dude i am a boy .", "male"),
    _T("g_sr_man", "gender", True, "come on , i am a man .", "male"),
    _T("g_sr_girlfriend", "gender", True, "my girlfriend and i are watching a movie .", "male"),
    _T("g_sr_wife", "gender", True, "my wife loves this song .", "male"),
    # gender, not about the speaker
    _T("g_ir_boyfriend", "gender", False, "go find your boyfriend ha ha ."),
    _T("g_ir_sister", "gender", False, "my sister loves rainy days more than anyone ."),
    _T("g_ir_brother", "gender", False, "my brother acts like a real man ."),
    _T("g_ir_ask", "gender", False, "are you a boy or a girl ?"),
    # constellation, self-revealing (some with a second sign word)
    _T("c_sr_sign", "constellation", True, "my sign is {VALUE} ."),
    _T("c_sr_typical", "constellation", True, "i am a typical {VALUE} person ."),
    _T("c_sr_bullied", "constellation", True, "i am the {VALUE} bullied by the {OTHER} ."),
    _T("c_sr_friend", "constellation", True, "i am {VALUE} and my best friend is {OTHER} ."),
    # constellation, not about the speaker
    _T("c_ir_mom", "constellation", False, "my mom is {VALUE} and she hates rain ."),
    _T("c_ir_ask", "constellation", False, "are you also {VALUE} ?"),
    _T("c_ir_trait", "constellation", False, "{VALUE} people are said to be stubborn ."),
    _T("c_ir_two", "constellation", False, "{VALUE} and {OTHER} never get along ."),
    # location, self-revealing
    _T("l_sr_in", "location", True, "i am in {CITY} now ."),
    _T("l_sr_live", "location", True, "i live in {CITY} ."),
    _T("l_sr_we", "location", True, "impossible ! we are in {CITY} ."),
    _T("l_sr_home", "location", True, "i just got back home to {CITY} ."),
    _T("l_sr_thought", "location", True, "emm i thought you came to {CITY} ."),
    # location, not about the speaker (third person, desire, topic mention)
    _T("l_ir_she", "location", False, "she lives in {CITY} ."),
    _T("l_ir_cousin", "location", False, "my cousin moved to {CITY} last year ."),
    _T("l_ir_visit", "location", False, "i hope to visit {CITY} one day ."),
    _T("l_ir_history", "location", False, "i am interested in the history of {CITY} ."),
)

_DEFAULT_POSTS = {
    "gender": ("girls would catch cold in this weather .",
               "who will fix the computer ?",
               "do you ever go to the gym ?"),
    "location": ("are you around this weekend ?",
                 "i am not here these days .",
                 "where did you take this photo ?"),
    "constellation": ("what is your sign ?",
                      "do you believe in horoscopes ?",
                      "my horoscope says today is lucky ."),
}

_KNOWN_SLOTS = ("{VALUE}", "{CITY}", "{OTHER}")


@dataclass
class TemplateBank:
    """All surface forms: response templates, posts, profile sentences."""

    responses: tuple[ResponseTemplate, ...] = _DEFAULT_TEMPLATES
    posts: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(_DEFAULT_POSTS))
    profile_sentences: dict[str, str] = field(
        default_factory=lambda: dict(DEFAULT_PROFILE_TEMPLATES))

    def __post_init__(self):
        self.responses = tuple(self.responses)
        ids = [t.template_id for t in self.responses]
        if len(set(ids)) != len(ids):
            raise GenerationError("duplicate template ids")
        for t in self.responses:
            for tok in t.text.split():
                if tok.startswith("{") and tok not in _KNOWN_SLOTS:
                    raise GenerationError(f"template {t.template_id}: unknown slot {tok}")
            if t.domain == "gender" and t.self_revealing and t.implied_value is None:
                raise GenerationError(f"template {t.template_id}: gender evidence "
                                      "needs an implied value")

    def by_domain(self, domain: str, self_revealing: bool | None = None,
                  implied: str | None = None) -> list[ResponseTemplate]:
        out = [t for t in self.responses if t.domain == domain]
        if self_revealing is not None:
            out = [t for t in out if t.self_revealing == self_revealing]
        if implied is not None:
            out = [t for t in out if t.implied_value == implied]
        return out

    def to_dict(self) -> dict:
        return {
            "responses": [vars(t).copy() for t in self.responses],
            "posts": {d: list(ps) for d, ps in self.posts.items()},
            "profile_sentences": dict(self.profile_sentences),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TemplateBank":
        return cls(
            responses=tuple(ResponseTemplate(**t) for t in d["responses"]),
            posts={k: tuple(v) for k, v in d["posts"].items()},
            profile_sentences=dict(d["profile_sentences"]),
        )


def default_bank() -> TemplateBank:
    return TemplateBank()


def load_bank(path: str | Path) -> TemplateBank:
    return TemplateBank.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_ontology(path: str | Path) -> LocationOntology:
    return LocationOntology.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def levenshtein(a: str, b: str) -> int:
    """Character-level edit distance (insert/delete/substitute, unit costs)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class TemplateMatch:
    template: ResponseTemplate
    value: str | None
    other: str | None

    @property
    def revealed(self) -> str | None:
        if not self.template.self_revealing:
            return None
        return self.value if self.value is not None else self.template.implied_value


def _slot_ok(slot: str, token: str, ontology: LocationOntology) -> bool:
    if slot == "{VALUE}" or slot == "{OTHER}":
        return token in CONSTELLATIONS
    if slot == "{CITY}":
        return ontology.is_location_name(token)
    return False


def match_response(tokens: Sequence[str], bank: TemplateBank,
                   ontology: LocationOntology, domain: str | None = None) -> TemplateMatch:
    """Recover the producing template and its slot bindings from a response."""
    tokens = tuple(tokens)
    candidates = bank.by_domain(domain) if domain else list(bank.responses)
    for t in candidates:
        ttoks = t.text.split()
        if len(ttoks) != len(tokens):
            continue
        value = other = None
        for a, b in zip(ttoks, tokens):
            if a in _KNOWN_SLOTS:
                if not _slot_ok(a, b, ontology):
                    break
                if a == "{OTHER}":
                    other = b
                else:
                    value = b
            elif a != b:
                break
        else:
            return TemplateMatch(t, value, other)
    raise GenerationError(f"no known template matches response: {' '.join(tokens)!r}")


def location_entails(profile_value: str, revealed: str, ontology: LocationOntology) -> bool:
    """Does a revealed location name agree with a profile location value?

    A "province city" value agrees with either of its two names; a bare
    province agrees with itself and any of its cities; a bare city agrees
    with itself and its province. Anything else requires an exact match.
    """
    return revealed in _entail_names(profile_value, ontology)


def _entail_names(profile_value: str, ontology: LocationOntology) -> set[str]:
    toks = profile_value.split()
    if len(toks) == 2 and ontology.is_province(toks[0]) and toks[1] in ontology.cities(toks[0]):
        return set(toks)
    if len(toks) == 1 and ontology.is_province(toks[0]):
        return {toks[0], *ontology.cities(toks[0])}
    if len(toks) == 1 and ontology.is_city(toks[0]):
        return {toks[0], ontology.province_of(toks[0])}
    return {profile_value}


def canonical_attribute_value(domain: str, revealed: str, ontology: LocationOntology) -> str:
    """Annotated-attribute form: cities are written as "province city"."""
    if domain == "location" and ontology.is_city(revealed):
        return f"{ontology.province_of(revealed)} {revealed}"
    return revealed


def rule_oracle(ex: Example, ontology: LocationOntology | None = None,
                bank: TemplateBank | None = None) -> ConsistencyLabel:
    """Re-derive the consistency label of a generated example from scratch.

    Non-self-revealing responses are irrelevant regardless of their content;
    self-revealing ones are entailed iff the revealed value agrees with the
    profile value under the ontology, else contradicted.
    """
    ontology = ontology if ontology is not None else default_ontology()
    bank = bank if bank is not None else default_bank()
    m = match_response(ex.response, bank, ontology, domain=ex.domain)
    if not m.template.self_revealing:
        return ConsistencyLabel.IRRELEVANT
    revealed = m.revealed
    profile_value = ex.profile.value(ex.domain)
    if ex.domain == "location":
        entailed = location_entails(profile_value, revealed, ontology)
    else:
        entailed = revealed == profile_value
    return ConsistencyLabel.ENTAILED if entailed else ConsistencyLabel.CONTRADICTED


def candidate_values(domain: str, ontology: LocationOntology) -> list[str]:
    """Closed per-domain candidate set of profile values."""
    if domain == "gender":
        return list(GENDERS)
    if domain == "constellation":
        return list(CONSTELLATIONS)
    if domain == "location":
        return ontology.profile_values()
    raise GenerationError(f"unknown domain {domain!r}")


def conflicts_with_revealed(domain: str, candidate: str, attr_value: str,
                            ontology: LocationOntology) -> bool:
    """Would `candidate` as the profile value contradict the revealed attribute?

    For locations the rewrite must break cleanly: the candidate may share no
    name with the revealed city/province (a same-province rewrite would keep
    a consistent container in the profile).
    """
    if domain != "location":
        return candidate != attr_value
    guard = set(attr_value.split())
    for name in list(guard):
        if ontology.is_city(name):
            guard.add(ontology.province_of(name))
        elif ontology.is_province(name):
            guard.update(ontology.cities(name))
    return not (set(candidate.split()) & guard)


def rewrite_contradiction(ex: Example, ontology: LocationOntology | None = None) -> Example:
    """Flip an entailed example by rewriting one profile value.

    The annotated key's value is replaced by the conflicting candidate closest
    to the original in character edit distance (ties: lexicographically
    smallest). The response is untouched.
    """
    ontology = ontology if ontology is not None else default_ontology()
    if ex.label != ConsistencyLabel.ENTAILED or ex.attribute is None:
        raise GenerationError("rewrite needs an entailed example with an annotated attribute")
    key, attr_value = ex.attribute
    original = ex.profile.value(key)
    conflicting = [v for v in candidate_values(key, ontology)
                   if conflicts_with_revealed(key, v, attr_value, ontology)]
    if not conflicting:
        raise GenerationError(f"no conflicting candidate for {key}={attr_value!r}")
    replacement = min(conflicting, key=lambda v: (levenshtein(v, original), v))
    return Example(
        profile=ex.profile.replace_value(key, replacement),
        post=ex.post,
        response=ex.response,
        domain=ex.domain,
        label=ConsistencyLabel.CONTRADICTED,
        attribute=ex.attribute,
        response_parse=ex.response_parse,
    )


@dataclass
class GenConfig:
    """Counts, label/domain mixes (corpus-statistics defaults), and knobs."""

    counts: dict[str, int] = field(
        default_factory=lambda: {"train": 6000, "valid": 1000, "test": 1000})
    label_mix: tuple[float, float, float] = (0.28, 0.26, 0.46)   # E / C / I
    domain_mix: tuple[float, float, float] = (0.26, 0.55, 0.19)  # gender / location / constellation
    seed: int = 0
    rewrite_fraction: float = 1 / 3   # share of contradictions built by profile rewriting
    keyswap_fraction: float = 0.0     # share of E/C examples built with a swapped distractor
    keyswap_count: int = 0            # size of the separate adversarial set

    def __post_init__(self):
        for name, mix in (("label_mix", self.label_mix), ("domain_mix", self.domain_mix)):
            if abs(sum(mix) - 1.0) > 1e-9:
                raise GenerationError(f"{name} must sum to 1, got {sum(mix)}")
        if any(c < 0 for c in self.counts.values()):
            raise GenerationError("split counts must be non-negative")

    def to_dict(self) -> dict:
        return {"counts": dict(self.counts), "label_mix": list(self.label_mix),
                "domain_mix": list(self.domain_mix), "seed": self.seed,
                "rewrite_fraction": self.rewrite_fraction,
                "keyswap_fraction": self.keyswap_fraction,
                "keyswap_count": self.keyswap_count}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GenConfig":
        d = dict(d)
        if "label_mix" in d:
            d["label_mix"] = tuple(d["label_mix"])
        if "domain_mix" in d:
            d["domain_mix"] = tuple(d["domain_mix"])
        return cls(**d)


def quotas(n: int, mix: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of n slots over mix proportions."""
    raw = [n * m for m in mix]
    out = [int(r) for r in raw]
    remainder = n - sum(out)
    order = sorted(range(len(mix)), key=lambda i: (out[i] - raw[i], i))
    for i in order[:remainder]:
        out[i] += 1
    return out


_LABELS = (ConsistencyLabel.ENTAILED, ConsistencyLabel.CONTRADICTED,
           ConsistencyLabel.IRRELEVANT)
_DOMAINS = ("gender", "location", "constellation")
_SWAP_PARTNER = {"location": "constellation", "constellation": "location"}


class _Generator:
    def __init__(self, cfg: GenConfig, bank: TemplateBank, ontology: LocationOntology,
                 rng: random.Random, seen: set):
        self.cfg = cfg
        self.bank = bank
        self.onto = ontology
        self.rng = rng
        self.seen = seen

    def random_profile(self) -> Profile:
        gender = self.rng.choice(GENDERS)
        prov = self.rng.choice(sorted(self.onto.provinces))
        if self.rng.random() < 0.5:
            location = prov
        else:
            location = f"{prov} {self.rng.choice(self.onto.cities(prov))}"
        sign = self.rng.choice(CONSTELLATIONS)
        return Profile((("gender", gender), ("location", location),
                        ("constellation", sign)))

    def fill(self, template: ResponseTemplate, value: str | None,
             other: str | None) -> tuple[str, ...]:
        text = template.text
        if value is not None:
            text = text.replace("{VALUE}", value).replace("{CITY}", value)
        if other is not None:
            text = text.replace("{OTHER}", other)
        return tuple(text.split())

    def entailed_reveal(self, profile: Profile, domain: str) -> str:
        """Pick a revealed name consistent with the profile value."""
        if domain == "location":
            names = sorted(_entail_names(profile.value("location"), self.onto))
            return self.rng.choice(names)
        return profile.value(domain)

    def conflicting_reveal(self, profile_value: str, domain: str) -> str:
        if domain == "gender":
            return GENDERS[1 - GENDERS.index(profile_value)]
        if domain == "constellation":
            pool = [s for s in CONSTELLATIONS if s != profile_value]
            return self.rng.choice(pool)
        consistent = _entail_names(profile_value, self.onto)
        pool = sorted(set(self.onto._province_of) | set(self.onto.provinces))
        pool = [n for n in pool if n not in consistent]
        if not pool:
            raise GenerationError("ontology too small to pick a conflicting location")
        return self.rng.choice(pool)

    def other_sign(self, exclude: str) -> str:
        return self.rng.choice([s for s in CONSTELLATIONS if s != exclude])

    def build(self, label: ConsistencyLabel, domain: str, keyswap: bool) -> Example:
        profile = self.random_profile()
        post = tuple(self.rng.choice(self.bank.posts[domain]).split())

        if label == ConsistencyLabel.IRRELEVANT:
            t = self.rng.choice(self.bank.by_domain(domain, self_revealing=False))
            value = other = None
            if "{VALUE}" in t.text or "{CITY}" in t.text:
                value = (self.rng.choice(CONSTELLATIONS) if domain == "constellation"
                         else self.conflict_free_name())
            if "{OTHER}" in t.text:
                other = self.other_sign(value)
            return Example(profile=profile, post=post,
                           response=self.fill(t, value, other), domain=domain,
                           label=label, attribute=None)

        if label == ConsistencyLabel.CONTRADICTED and not keyswap \
                and self.rng.random() < self.cfg.rewrite_fraction:
            entailed = self.build(ConsistencyLabel.ENTAILED, domain, keyswap=False)
            return rewrite_contradiction(entailed, self.onto)

        if keyswap and domain in _SWAP_PARTNER:
            return self.build_keyswap(label, domain, profile, post)

        if domain == "gender":
            wanted = (profile.value("gender") if label == ConsistencyLabel.ENTAILED
                      else self.conflicting_reveal(profile.value("gender"), "gender"))
            t = self.rng.choice(self.bank.by_domain(domain, True, implied=wanted))
            revealed = wanted
            value = other = None
        else:
            t = self.rng.choice(self.bank.by_domain(domain, self_revealing=True))
            if label == ConsistencyLabel.ENTAILED:
                revealed = self.entailed_reveal(profile, domain)
            else:
                revealed = self.conflicting_reveal(profile.value(domain), domain)
            value = revealed
            other = self.other_sign(revealed) if "{OTHER}" in t.text else None
        attr = (domain, canonical_attribute_value(domain, revealed, self.onto))
        return Example(profile=profile, post=post,
                       response=self.fill(t, value, other), domain=domain,
                       label=label, attribute=attr)

    def conflict_free_name(self) -> str:
        pool = sorted(set(self.onto._province_of) | set(self.onto.provinces))
        return self.rng.choice(pool)

    def build_keyswap(self, label: ConsistencyLabel, domain: str,
                      profile: Profile, post) -> Example:
        """Place a valid value of one key under its partner key.

        Entailed: the profile value under the partner key is a plausible value
        of the response's domain (a second sign next to the location key, or a
        location name next to the constellation key). Contradicted: the
        revealed value itself sits under the partner key while the domain key
        holds a value borrowed from the partner's value space.
        """
        partner = _SWAP_PARTNER[domain]
        t = self.rng.choice(self.bank.by_domain(domain, self_revealing=True))
        if label == ConsistencyLabel.ENTAILED:
            revealed = self.entailed_reveal(profile, domain)
            distractor = (self.other_sign(revealed) if domain == "constellation"
                          else self.conflicting_reveal(profile.value(domain), domain))
            profile = profile.replace_value(partner, distractor)
        else:
            revealed = (self.rng.choice(CONSTELLATIONS) if domain == "constellation"
                        else self.conflict_free_name())
            profile = profile.replace_value(partner, revealed)
            borrowed = (self.rng.choice(sorted(self.onto.provinces))
                        if domain == "constellation" else self.rng.choice(CONSTELLATIONS))
            profile = profile.replace_value(domain, borrowed)
        other = self.other_sign(revealed) if "{OTHER}" in t.text else None
        attr = (domain, canonical_attribute_value(domain, revealed, self.onto))
        return Example(profile=profile, post=post,
                       response=self.fill(t, revealed, other), domain=domain,
                       label=label, attribute=attr)

    def generate(self, count: int, keyswap_only: bool = False) -> list[Example]:
        if keyswap_only:
            labels = [_LABELS[i] for i, q in enumerate(quotas(count, (0.5, 0.5, 0.0)))
                      for _ in range(q)]
            domains = [d for d, q in zip(("location", "constellation"),
                                         quotas(count, (0.5, 0.5)))
                       for _ in range(q)]
        else:
            labels = [_LABELS[i] for i, q in enumerate(quotas(count, self.cfg.label_mix))
                      for _ in range(q)]
            domains = [_DOMAINS[i] for i, q in enumerate(quotas(count, self.cfg.domain_mix))
                       for _ in range(q)]
        self.rng.shuffle(labels)
        self.rng.shuffle(domains)
        out = []
        for label, domain in zip(labels, domains):
            keyswap = keyswap_only or (
                label != ConsistencyLabel.IRRELEVANT
                and domain in _SWAP_PARTNER
                and self.rng.random() < self.cfg.keyswap_fraction)
            for attempt in range(200):
                ex = self.build(label, domain, keyswap)
                key = (ex.profile.pairs, ex.response)
                if key not in self.seen:
                    break
            else:
                raise GenerationError(
                    "could not find a fresh (profile, response) combination; "
                    "the configured mix is infeasible for this bank/ontology")
            self.seen.add(key)
            if rule_oracle(ex, self.onto, self.bank) != ex.label:
                raise GenerationError(f"generated example fails its own oracle: {ex}")
            out.append(ex)
        return out


def generate(cfg: GenConfig, bank: TemplateBank | None = None,
             ontology: LocationOntology | None = None, split: str = "train",
             seen: set | None = None) -> Dataset:
    """Generate one split; deterministic in (cfg.seed, split)."""
    bank = bank if bank is not None else default_bank()
    ontology = ontology if ontology is not None else default_ontology()
    rng = random.Random(f"{cfg.seed}/{split}")
    gen = _Generator(cfg, bank, ontology, rng, seen if seen is not None else set())
    count = cfg.counts.get(split, 0) if split != "keyswap" else cfg.keyswap_count
    return Dataset(examples=gen.generate(count, keyswap_only=split == "keyswap"),
                   split=split)


def generate_all(cfg: GenConfig, bank: TemplateBank | None = None,
                 ontology: LocationOntology | None = None) -> dict[str, Dataset]:
    """All configured splits with disjoint (profile, response) surface forms."""
    seen: set = set()
    splits = {}
    for split in cfg.counts:
        splits[split] = generate(cfg, bank, ontology, split=split, seen=seen)
    if cfg.keyswap_count > 0:
        splits["keyswap"] = generate(cfg, bank, ontology, split="keyswap", seen=seen)
    return splits
