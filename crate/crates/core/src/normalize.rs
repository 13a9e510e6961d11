//! Canonical-form linking for predicted slot values.
//!
//! Every informable slot gets a set of canonical forms. A surface string is
//! linked to a canonical form when one of its aliases matches it exactly or
//! with `fuzzy_ratio >= 90`, and the match must be unique. Each canonical
//! form is rendered back as its most frequent observed surface, where gold
//! counts are smoothed with pseudo-counts for ontology listings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{CanonicalSchema, EntityDatabase, Ontology, ValueKind};
use crate::state::{SlotName, StateChange, DONTCARE};

pub const DEFAULT_SUFFIXES: [&str; 11] = [
    "hotel",
    "guest house",
    "guesthouse",
    "restaurant",
    "museum",
    "college",
    "church",
    "theatre",
    "cinema",
    "gallery",
    "attraction",
];

const NUMBER_WORDS: [&str; 11] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

/// Slots that also accept the name of any entity with an address.
const PLACE_SLOTS: [&str; 4] = [
    "taxi-departure",
    "taxi-destination",
    "train-departure",
    "train-destination",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NormalizeError {
    #[error("{surface:?} for {slot} links to several canonical forms: {candidates:?}")]
    AmbiguousLink {
        slot: SlotName,
        surface: String,
        candidates: Vec<String>,
    },
    #[error("uniqueness audit failed with {0} ambiguous surfaces")]
    AuditFailed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizerConfig {
    pub suffixes: Vec<String>,
    pub pseudo_count: u64,
    pub link_threshold: u32,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        Self {
            suffixes: DEFAULT_SUFFIXES.iter().map(|s| s.to_string()).collect(),
            pseudo_count: 10,
            link_threshold: 90,
        }
    }
}

/// Lowercases and collapses runs of whitespace.
pub fn fold(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn number_swap(token: &str) -> Option<String> {
    if let Some(i) = NUMBER_WORDS.iter().position(|w| *w == token) {
        return Some(i.to_string());
    }
    match token.parse::<usize>() {
        Ok(n) if n <= 10 && token.len() <= 2 && (token.len() == 1 || !token.starts_with('0')) => {
            Some(NUMBER_WORDS[n].to_string())
        }
        _ => None,
    }
}

/// Alias set of `surface` using the default suffix list.
pub fn aliases(surface: &str) -> BTreeSet<String> {
    aliases_with(surface, &DEFAULT_SUFFIXES)
}

/// Alias set of `surface`: the input, its folded form, and every variant
/// reachable by toggling a leading "the ", dropping or adding one suffix,
/// and swapping number tokens between digits and words (zero to ten).
pub fn aliases_with<S: AsRef<str>>(surface: &str, suffixes: &[S]) -> BTreeSet<String> {
    let base = fold(surface);
    let mut out = BTreeSet::from([surface.to_string(), base.clone()]);
    if base.is_empty() {
        return out;
    }

    // digit/word variants over every combination of swappable tokens
    let tokens: Vec<&str> = base.split(' ').collect();
    let mut numeric: Vec<Vec<String>> = vec![Vec::new()];
    for tok in &tokens {
        let alts: Vec<String> = std::iter::once(tok.to_string())
            .chain(number_swap(tok))
            .collect();
        numeric = numeric
            .into_iter()
            .flat_map(|prefix| {
                alts.iter().map(move |a| {
                    let mut p = prefix.clone();
                    p.push(a.clone());
                    p
                })
            })
            .collect();
    }

    for variant in numeric.into_iter().map(|v| v.join(" ")) {
        let bare = variant.strip_prefix("the ").unwrap_or(&variant).to_string();
        for core in [bare.clone(), format!("the {bare}")] {
            out.insert(core.clone());
            let mut has_suffix = false;
            for suf in suffixes {
                let suf = suf.as_ref();
                if let Some(stem) = core.strip_suffix(suf).and_then(|s| s.strip_suffix(' ')) {
                    if !stem.is_empty() && stem != "the" {
                        out.insert(stem.to_string());
                    }
                    has_suffix = true;
                }
            }
            if !has_suffix {
                for suf in suffixes {
                    out.insert(format!("{core} {}", suf.as_ref()));
                }
            }
        }
    }
    out
}

/// `round(100 * (|a| + |b| - D) / (|a| + |b|))` over case-folded characters,
/// with `D` the edit distance where a substitution costs 2.
pub fn fuzzy_ratio(a: &str, b: &str) -> u32 {
    let a: Vec<char> = a.to_lowercase().chars().collect();
    let b: Vec<char> = b.to_lowercase().chars().collect();
    let lensum = a.len() + b.len();
    if lensum == 0 {
        return 100;
    }
    // with substitution cost 2 the distance is lensum - 2 * LCS
    let mut row = vec![0usize; b.len() + 1];
    for ca in &a {
        let mut diag = 0;
        for (j, cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if ca == cb { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    let matched = 2 * row[b.len()];
    // half-up rounding in integers
    ((200 * matched + lensum) / (2 * lensum)) as u32
}

/// Pads `h:mm` to `hh:mm`; `None` unless the input is a valid 24-hour time.
pub fn canonical_time(text: &str) -> Option<String> {
    let (h, m) = text.trim().split_once(':')?;
    if h.is_empty() || h.len() > 2 || m.len() != 2 {
        return None;
    }
    if !h.bytes().chain(m.bytes()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let (h, m): (u32, u32) = (h.parse().ok()?, m.parse().ok()?);
    (h < 24 && m < 60).then(|| format!("{h:02}:{m:02}"))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
struct SlotForms {
    /// folded canonical -> canonical as written
    canonical: BTreeMap<String, String>,
    /// folded alias -> folded canonicals it was generated from
    alias_index: HashMap<String, BTreeSet<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditLink {
    pub slot: SlotName,
    pub surface: String,
    pub canonical: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditAmbiguity {
    pub slot: SlotName,
    pub surface: String,
    pub candidates: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub links: Vec<AuditLink>,
    pub ambiguities: Vec<AuditAmbiguity>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.ambiguities.is_empty()
    }
}

type LinkResult = Result<Option<String>, NormalizeError>;

/// Canonical inventory, preferred surfaces and a shared link cache.
#[derive(Debug)]
pub struct CanonicalMap {
    config: NormalizerConfig,
    forms: BTreeMap<SlotName, SlotForms>,
    time_slots: BTreeSet<SlotName>,
    /// (slot, folded canonical) -> preferred surface
    preferred: BTreeMap<(SlotName, String), String>,
    audit: AuditReport,
    cache: Mutex<HashMap<(SlotName, String), LinkResult>>,
}

/// Builds the map and fails with the first ambiguity found by the audit.
pub fn build_canonical_map(
    schema: &CanonicalSchema,
    db: &EntityDatabase,
    ontology: &Ontology,
    gold_counts: Option<&BTreeMap<SlotName, BTreeMap<String, u64>>>,
) -> Result<CanonicalMap, NormalizeError> {
    let map = CanonicalMap::build(schema, db, ontology, gold_counts, NormalizerConfig::default());
    match map.audit().ambiguities.first() {
        None => Ok(map),
        Some(a) => Err(NormalizeError::AmbiguousLink {
            slot: a.slot.clone(),
            surface: a.surface.clone(),
            candidates: a.candidates.clone(),
        }),
    }
}

impl CanonicalMap {
    /// Builds the map without rejecting ambiguities; see [`CanonicalMap::audit`].
    pub fn build(
        schema: &CanonicalSchema,
        db: &EntityDatabase,
        ontology: &Ontology,
        gold_counts: Option<&BTreeMap<SlotName, BTreeMap<String, u64>>>,
        config: NormalizerConfig,
    ) -> Self {
        let addressed: Vec<&str> = db
            .all_records()
            .filter(|r| r.address.as_deref().is_some_and(|a| !a.trim().is_empty()))
            .map(|r| r.name.as_str())
            .collect();

        let mut forms = BTreeMap::new();
        let mut time_slots = BTreeSet::new();
        for slot in schema.slot_names() {
            let def = schema.slot(&slot).expect("slot from schema");
            if def.value_kind == ValueKind::Time {
                time_slots.insert(slot);
                continue;
            }
            let mut values: Vec<&str> = Vec::new();
            if def.categorical {
                values.extend(def.allowed_values.iter().flatten().map(String::as_str));
            } else {
                values.extend(db.records(slot.domain()).iter().filter_map(|r| r.attr(slot.slot())));
            }
            if PLACE_SLOTS.contains(&slot.to_string().as_str()) {
                values.extend(addressed.iter().copied());
            }
            let mut sf = SlotForms::default();
            for v in values {
                let key = fold(v);
                if key.is_empty() || key == DONTCARE {
                    continue;
                }
                sf.canonical.entry(key).or_insert_with(|| v.to_string());
            }
            for key in sf.canonical.keys() {
                for alias in aliases_with(key, &config.suffixes) {
                    sf.alias_index.entry(fold(&alias)).or_default().insert(key.clone());
                }
            }
            if !sf.canonical.is_empty() {
                forms.insert(slot, sf);
            }
        }

        let mut map = Self {
            config,
            forms,
            time_slots,
            preferred: BTreeMap::new(),
            audit: AuditReport::default(),
            cache: Mutex::new(HashMap::new()),
        };
        map.choose_preferred(ontology, gold_counts);
        map
    }

    fn choose_preferred(
        &mut self,
        ontology: &Ontology,
        gold_counts: Option<&BTreeMap<SlotName, BTreeMap<String, u64>>>,
    ) {
        let slots: Vec<SlotName> = self.forms.keys().cloned().collect();
        let mut report = AuditReport::default();
        for slot in slots {
            let mut counts: BTreeMap<String, u64> = BTreeMap::new();
            for surface in self.forms[&slot].canonical.values() {
                counts.entry(surface.clone()).or_insert(0);
            }
            for surface in ontology.forms(&slot) {
                *counts.entry(surface.to_string()).or_insert(0) += self.config.pseudo_count;
            }
            if let Some(g) = gold_counts.and_then(|g| g.get(&slot)) {
                for (surface, n) in g {
                    *counts.entry(surface.clone()).or_insert(0) += n;
                }
            }
            // (count, surface) best per folded canonical
            let mut best: BTreeMap<String, (u64, String)> = BTreeMap::new();
            for (surface, n) in counts {
                if fold(&surface) == DONTCARE {
                    continue;
                }
                match self.link(&slot, &surface) {
                    Ok(Some(canonical)) => {
                        let key = fold(&canonical);
                        report.links.push(AuditLink {
                            slot: slot.clone(),
                            surface: surface.clone(),
                            canonical,
                        });
                        let replace = match best.get(&key) {
                            None => true,
                            // higher count wins, then the smaller string
                            Some((m, s)) => n > *m || (n == *m && surface < *s),
                        };
                        if replace {
                            best.insert(key, (n, surface));
                        }
                    }
                    Ok(None) => {}
                    Err(NormalizeError::AmbiguousLink { candidates, .. }) => {
                        report.ambiguities.push(AuditAmbiguity {
                            slot: slot.clone(),
                            surface,
                            candidates,
                        })
                    }
                    Err(NormalizeError::AuditFailed(_)) => unreachable!("link never fails the audit"),
                }
            }
            for (key, (_, surface)) in best {
                self.preferred.insert((slot.clone(), key), surface);
            }
        }
        self.audit = report;
    }

    pub fn config(&self) -> &NormalizerConfig {
        &self.config
    }

    /// Every surface linked while choosing preferred forms, plus every ambiguity.
    pub fn audit(&self) -> &AuditReport {
        &self.audit
    }

    pub fn is_time_slot(&self, slot: &SlotName) -> bool {
        self.time_slots.contains(slot)
    }

    /// Canonical forms of a slot as written; empty for time and unknown slots.
    pub fn canonical_forms(&self, slot: &SlotName) -> Vec<&str> {
        self.forms
            .get(slot)
            .map(|f| f.canonical.values().map(String::as_str).collect())
            .unwrap_or_default()
    }

    pub fn is_canonical(&self, slot: &SlotName, value: &str) -> bool {
        if self.is_time_slot(slot) {
            return canonical_time(value).as_deref() == Some(value);
        }
        self.forms
            .get(slot)
            .is_some_and(|f| f.canonical.contains_key(&fold(value)))
    }

    pub fn preferred_surface(&self, slot: &SlotName, canonical: &str) -> Option<&str> {
        self.preferred
            .get(&(slot.clone(), fold(canonical)))
            .map(String::as_str)
    }

    /// The unique canonical form `surface` links to for `slot`, if any.
    /// Exact alias matches take precedence over fuzzy ones.
    pub fn link(&self, slot: &SlotName, surface: &str) -> Result<Option<String>, NormalizeError> {
        if self.is_time_slot(slot) {
            return Ok(canonical_time(surface));
        }
        let key = (slot.clone(), surface.to_string());
        if let Some(hit) = self.cache.lock().expect("link cache").get(&key) {
            return hit.clone();
        }
        let result = self.link_uncached(slot, surface);
        self.cache
            .lock()
            .expect("link cache")
            .insert(key, result.clone());
        result
    }

    fn link_uncached(&self, slot: &SlotName, surface: &str) -> LinkResult {
        let Some(sf) = self.forms.get(slot) else {
            return Ok(None);
        };
        let variants: BTreeSet<String> = aliases_with(surface, &self.config.suffixes)
            .iter()
            .map(|a| fold(a))
            .filter(|a| !a.is_empty())
            .collect();

        let exact: BTreeSet<&String> = variants
            .iter()
            .filter_map(|v| sf.alias_index.get(v))
            .flatten()
            .collect();
        let hits: BTreeSet<&String> = if exact.is_empty() {
            let threshold = self.config.link_threshold;
            sf.canonical
                .keys()
                .filter(|c| {
                    let cl = c.chars().count();
                    variants.iter().any(|v| {
                        let vl = v.chars().count();
                        // the ratio is bounded by 2 * min / lensum
                        400 * cl.min(vl) + cl + vl >= 2 * threshold as usize * (cl + vl)
                            && fuzzy_ratio(v, c) >= threshold
                    })
                })
                .collect()
        } else {
            exact
        };

        let mut written: Vec<String> = hits.iter().map(|k| sf.canonical[*k].clone()).collect();
        match written.len() {
            0 => Ok(None),
            1 => Ok(written.pop()),
            _ => Err(NormalizeError::AmbiguousLink {
                slot: slot.clone(),
                surface: surface.to_string(),
                candidates: written,
            }),
        }
    }

    /// Replaces each literal with the preferred surface of its canonical form.
    /// Times are zero-padded; unlinked and ambiguous values pass through.
    pub fn normalize_value(&self, slot: &SlotName, value: &str) -> String {
        if fold(value) == DONTCARE {
            return value.to_string();
        }
        match self.link(slot, value) {
            Ok(Some(canonical)) if self.is_time_slot(slot) => canonical,
            Ok(Some(canonical)) => self
                .preferred_surface(slot, &canonical)
                .unwrap_or(&canonical)
                .to_string(),
            _ => value.to_string(),
        }
    }
}

/// Normalizes every literal of a predicted delta; references, dontcare and
/// removals are left alone.
pub fn normalize_prediction(delta: &StateChange, map: &CanonicalMap) -> StateChange {
    delta.map_literals(|slot, value| map.normalize_value(slot, value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::SlotValue;

    fn sn(s: &str) -> SlotName {
        s.parse().unwrap()
    }

    fn fixture() -> CanonicalMap {
        let schema = CanonicalSchema::from_json(
            r#"{"domains":[
              {"name":"hotel","slots":[
                {"name":"stars","categorical":true,"values":["1","2","3","4","5"],"kind":"integer"},
                {"name":"name","kind":"text"}]},
              {"name":"taxi","slots":[
                {"name":"destination","kind":"location"},
                {"name":"leaveat","kind":"time"}]}]}"#,
        )
        .unwrap();
        let db = EntityDatabase::from_json(
            r#"{"hotel":[{"name":"acorn guest house","address":"154 chesterton road","stars":4},
                         {"name":"alexander bed and breakfast","address":"56 saint barnabas road","stars":4}],
                "attraction":[{"name":"byard art"}]}"#,
        )
        .unwrap();
        let ontology = Ontology::from_json(
            r#"{"hotel-stars":["4","four"],"hotel-name":["acorn guest house","the acorn guest house"]}"#,
        )
        .unwrap();
        let gold: BTreeMap<SlotName, BTreeMap<String, u64>> = BTreeMap::from([(
            sn("hotel-name"),
            BTreeMap::from([("the acorn guest house".to_string(), 5u64)]),
        )]);
        CanonicalMap::build(&schema, &db, &ontology, Some(&gold), NormalizerConfig::default())
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(fuzzy_ratio("abcd", "abce"), 75);
        assert_eq!(fuzzy_ratio("abc", ""), 0);
        assert_eq!(fuzzy_ratio("", ""), 100);
        assert_eq!(fuzzy_ratio("Same", "same"), 100);
        assert_eq!(fuzzy_ratio("cambridge lodge", "cambrdge lodge"), 97);
    }

    #[test]
    fn alias_rules() {
        assert!(aliases("1").contains("one"));
        assert!(aliases("one").contains("1"));
        assert!(aliases("the acorn guest house").contains("acorn guest house"));
        assert!(aliases("the acorn guest house").contains("acorn"));
        assert!(aliases("Byard  Art").contains("Byard  Art"));
        assert!(aliases("Byard  Art").contains("the byard art gallery"));
        assert!(aliases("10").contains("ten"));
        assert!(!aliases("11").contains("eleven"));
    }

    #[test]
    fn times() {
        assert_eq!(canonical_time("9:15").as_deref(), Some("09:15"));
        assert_eq!(canonical_time("25:00"), None);
        assert_eq!(canonical_time("12:5"), None);
        let m = fixture();
        assert!(!m.is_canonical(&sn("taxi-leaveat"), "25:00"));
        assert!(m.is_canonical(&sn("taxi-leaveat"), "23:59"));
    }

    #[test]
    fn linking() {
        let m = fixture();
        let name = sn("hotel-name");
        assert_eq!(m.link(&name, "acorn guest house").unwrap().as_deref(), Some("acorn guest house"));
        assert_eq!(m.link(&name, "Acorn Guesthouse").unwrap().as_deref(), Some("acorn guest house"));
        assert_eq!(
            m.link(&name, "alexander bed and breakfst").unwrap().as_deref(),
            Some("alexander bed and breakfast")
        );
        assert_eq!(m.link(&name, "qwxzv").unwrap(), None);
        // entity with an address is a valid destination, one without is not
        let dest = sn("taxi-destination");
        assert!(m.is_canonical(&dest, "acorn guest house"));
        assert!(!m.is_canonical(&dest, "byard art"));
        assert!(m.audit().passed(), "{:?}", m.audit().ambiguities);
    }

    #[test]
    fn preferred_surfaces() {
        let m = fixture();
        // gold 5 + ontology 10 beats ontology 10
        assert_eq!(
            m.preferred_surface(&sn("hotel-name"), "acorn guest house"),
            Some("the acorn guest house")
        );
        let d = StateChange::new()
            .with(sn("hotel-stars"), SlotValue::literal("four").unwrap())
            .with(sn("taxi-leaveat"), SlotValue::literal("9:15").unwrap())
            .with(sn("hotel-name"), SlotValue::literal("acorn").unwrap())
            .with(sn("taxi-destination"), SlotValue::Reference(sn("hotel-name")))
            .without(sn("hotel-area"));
        let n = normalize_prediction(&d, &m);
        let lit = |s: &str| n.updates()[&sn(s)].clone();
        assert_eq!(lit("hotel-stars"), SlotValue::literal("4").unwrap());
        assert_eq!(lit("taxi-leaveat"), SlotValue::literal("09:15").unwrap());
        assert_eq!(lit("hotel-name"), SlotValue::literal("the acorn guest house").unwrap());
        assert_eq!(lit("taxi-destination"), SlotValue::Reference(sn("hotel-name")));
        assert_eq!(normalize_prediction(&n, &m), n);
    }

    #[test]
    fn count_arithmetic() {
        let schema = CanonicalSchema::from_json(
            r#"{"domains":[{"name":"hotel","slots":[{"name":"type","categorical":true,"values":["guesthouse"],"kind":"text"}]}]}"#,
        )
        .unwrap();
        let ontology =
            Ontology::from_json(r#"{"hotel-type":["guest house","guesthouse"]}"#).unwrap();
        let gold = BTreeMap::from([(
            sn("hotel-type"),
            BTreeMap::from([("guest house".to_string(), 12u64), ("guesthouse".to_string(), 3)]),
        )]);
        let m = CanonicalMap::build(
            &schema,
            &EntityDatabase::default(),
            &ontology,
            Some(&gold),
            NormalizerConfig::default(),
        );
        assert_eq!(m.preferred_surface(&sn("hotel-type"), "guesthouse"), Some("guest house"));
        let zero = CanonicalMap::build(
            &schema,
            &EntityDatabase::default(),
            &ontology,
            None,
            NormalizerConfig::default(),
        );
        assert_eq!(zero.preferred_surface(&sn("hotel-type"), "guesthouse"), Some("guest house"));
    }

    #[test]
    fn ambiguity_is_reported() {
        let schema = CanonicalSchema::from_json(
            r#"{"domains":[{"name":"hotel","slots":[{"name":"name","kind":"text"}]}]}"#,
        )
        .unwrap();
        let db = EntityDatabase::from_json(
            r#"{"hotel":[{"name":"acorn"},{"name":"acorn guest house"}]}"#,
        )
        .unwrap();
        let ontology = Ontology::from_json(r#"{"hotel-name":["the acorn"]}"#).unwrap();
        let m = CanonicalMap::build(&schema, &db, &ontology, None, NormalizerConfig::default());
        assert!(!m.audit().passed());
        assert!(build_canonical_map(&schema, &db, &ontology, None).is_err());
        // ambiguous predictions pass through untouched
        assert_eq!(m.normalize_value(&sn("hotel-name"), "the acorn"), "the acorn");
    }
}
