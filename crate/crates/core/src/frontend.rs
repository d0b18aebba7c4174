//! Symbol inventory and personal-filler special tokens.
//!
//! A personal filler is a speaker-habitual phrase ("you know", "er") whose
//! phonemes are replaced by one speaker-specific token such as `<spc1>`.
//! Two speakers sharing the same filler text still get different tokens.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// The shared pause symbol.
pub const PAUSE: &str = "sp";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SymbolKind {
    Base,
    Pause,
    SpecialToken,
}

impl SymbolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SymbolKind::Base => "base",
            SymbolKind::Pause => "pause",
            SymbolKind::SpecialToken => "special",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "base" => Some(SymbolKind::Base),
            "pause" => Some(SymbolKind::Pause),
            "special" => Some(SymbolKind::SpecialToken),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeSymbol {
    pub text: String,
    pub id: usize,
    pub kind: SymbolKind,
}

/// True for labels of the form `<spcN>` with `N` a positive integer.
pub fn is_special_token(label: &str) -> bool {
    let Some(digits) = label
        .strip_prefix("<spc")
        .and_then(|rest| rest.strip_suffix('>'))
    else {
        return false;
    };
    !digits.is_empty()
        && digits.bytes().all(|b| b.is_ascii_digit())
        && !digits.starts_with('0')
}

fn is_plain_label(label: &str) -> bool {
    !label.is_empty()
        && !label.contains('<')
        && !label.contains('>')
        && !label.chars().any(char::is_whitespace)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FillerEntry {
    pub speaker: String,
    pub filler: Vec<String>,
    pub token: String,
}

/// Per-speaker mapping from filler phoneme sequences to special tokens.
///
/// Invariants, checked on construction: every token is unique across the
/// whole registry, fillers are non-empty sequences of plain labels, and for
/// a given speaker no filler is a prefix of another.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FillerRegistry {
    entries: Vec<FillerEntry>,
}

impl FillerRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(entries: Vec<FillerEntry>) -> Result<Self> {
        let mut tokens = BTreeSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.speaker.is_empty() || e.speaker.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("entry {i}: invalid speaker id `{}`", e.speaker)));
            }
            if !is_special_token(&e.token) {
                return Err(Error::Config(format!(
                    "entry {i}: token `{}` does not match <spcN>",
                    e.token
                )));
            }
            if !tokens.insert(e.token.as_str()) {
                return Err(Error::Config(format!("token `{}` registered twice", e.token)));
            }
            if e.filler.is_empty() {
                return Err(Error::Config(format!("entry {i}: empty filler for `{}`", e.token)));
            }
            if let Some(bad) = e.filler.iter().find(|l| !is_plain_label(l)) {
                return Err(Error::Config(format!(
                    "entry {i}: filler label `{bad}` is not a plain phoneme"
                )));
            }
        }
        for (i, a) in entries.iter().enumerate() {
            for b in entries.iter().skip(i + 1) {
                if a.speaker != b.speaker {
                    continue;
                }
                let (short, long) = if a.filler.len() <= b.filler.len() {
                    (a, b)
                } else {
                    (b, a)
                };
                if long.filler.starts_with(&short.filler) {
                    return Err(Error::Config(format!(
                        "speaker `{}`: filler of {} is a prefix of the filler of {}",
                        a.speaker, short.token, long.token
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    /// Parses `speaker<TAB>token<TAB>phonemes` lines; blank and `#` lines
    /// are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(speaker), Some(token), Some(phonemes), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::Config(format!(
                    "registry line {}: expected 3 tab-separated fields",
                    n + 1
                )));
            };
            entries.push(FillerEntry {
                speaker: speaker.trim().to_string(),
                token: token.trim().to_string(),
                filler: phonemes.split_whitespace().map(ToString::to_string).collect(),
            });
        }
        Self::new(entries)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.speaker);
            out.push('\t');
            out.push_str(&e.token);
            out.push('\t');
            out.push_str(&e.filler.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn entries(&self) -> &[FillerEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn for_speaker<'a>(&'a self, speaker: &'a str) -> impl Iterator<Item = &'a FillerEntry> {
        self.entries.iter().filter(move |e| e.speaker == speaker)
    }

    pub fn by_token(&self, token: &str) -> Option<&FillerEntry> {
        self.entries.iter().find(|e| e.token == token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.token.as_str())
    }

    /// Only the entries belonging to `speakers`.
    pub fn restricted_to(&self, speakers: &[&str]) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|e| speakers.contains(&e.speaker.as_str()))
                .cloned()
                .collect(),
        }
    }
}

/// Replaces every registered filler of `speaker` by its token.
///
/// Scans left to right; at each position the longest matching filler wins,
/// otherwise the label passes through. Fillers must be contiguous: a pause
/// inside a filler breaks the match.
pub fn replace_fillers<S: AsRef<str>>(
    phonemes: &[S],
    speaker: &str,
    registry: &FillerRegistry,
) -> Result<Vec<String>> {
    for (position, label) in phonemes.iter().enumerate() {
        let label = label.as_ref();
        if !is_plain_label(label) {
            return Err(Error::UnknownLabel {
                label: label.to_string(),
                position,
            });
        }
    }
    let mut candidates: Vec<&FillerEntry> = registry.for_speaker(speaker).collect();
    candidates.sort_by(|a, b| b.filler.len().cmp(&a.filler.len()));

    let mut out = Vec::with_capacity(phonemes.len());
    let mut i = 0;
    while i < phonemes.len() {
        let hit = candidates.iter().find(|e| {
            e.filler.len() <= phonemes.len() - i
                && e.filler
                    .iter()
                    .zip(&phonemes[i..])
                    .all(|(f, p)| f == p.as_ref())
        });
        match hit {
            Some(e) => {
                out.push(e.token.clone());
                i += e.filler.len();
            }
            None => {
                out.push(phonemes[i].as_ref().to_string());
                i += 1;
            }
        }
    }
    Ok(out)
}

/// Replaces each special token by its filler phonemes.
pub fn expand_special_tokens<S: AsRef<str>>(
    phonemes: &[S],
    registry: &FillerRegistry,
) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(phonemes.len());
    for label in phonemes {
        let label = label.as_ref();
        if label.contains('<') || label.contains('>') {
            let entry = registry
                .by_token(label)
                .ok_or_else(|| Error::UnregisteredToken(label.to_string()))?;
            out.extend(entry.filler.iter().cloned());
        } else {
            out.push(label.to_string());
        }
    }
    Ok(out)
}

/// Bijection between labels and contiguous integer ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolTable {
    symbols: Vec<PhonemeSymbol>,
    lookup: BTreeMap<String, usize>,
}

impl SymbolTable {
    /// Base inventory in the given order, then the pause symbol, then every
    /// registry token sorted by label.
    pub fn build<S: AsRef<str>>(base_inventory: &[S], registry: &FillerRegistry) -> Result<Self> {
        if base_inventory.is_empty() {
            return Err(Error::Config("empty base inventory".into()));
        }
        let mut labels: Vec<(String, SymbolKind)> = Vec::new();
        for label in base_inventory {
            let label = label.as_ref();
            if label == PAUSE {
                continue;
            }
            if !is_plain_label(label) {
                return Err(Error::Config(format!("invalid base label `{label}`")));
            }
            labels.push((label.to_string(), SymbolKind::Base));
        }
        labels.push((PAUSE.to_string(), SymbolKind::Pause));
        let mut tokens: Vec<&str> = registry.tokens().collect();
        tokens.sort_unstable();
        labels.extend(tokens.into_iter().map(|t| (t.to_string(), SymbolKind::SpecialToken)));
        Self::from_labels(labels)
    }

    fn from_labels(labels: Vec<(String, SymbolKind)>) -> Result<Self> {
        let mut lookup = BTreeMap::new();
        let mut symbols = Vec::with_capacity(labels.len());
        for (id, (text, kind)) in labels.into_iter().enumerate() {
            if lookup.insert(text.clone(), id).is_some() {
                return Err(Error::Config(format!("duplicate symbol `{text}`")));
            }
            symbols.push(PhonemeSymbol { text, id, kind });
        }
        Ok(Self { symbols, lookup })
    }

    /// This table followed by any registry tokens it does not contain yet,
    /// so every existing id keeps its meaning.
    pub fn extended_with(&self, registry: &FillerRegistry) -> Result<Self> {
        let mut labels: Vec<(String, SymbolKind)> = self
            .symbols
            .iter()
            .map(|s| (s.text.clone(), s.kind))
            .collect();
        let mut fresh: Vec<&str> = registry
            .tokens()
            .filter(|t| !self.lookup.contains_key(*t))
            .collect();
        fresh.sort_unstable();
        labels.extend(fresh.into_iter().map(|t| (t.to_string(), SymbolKind::SpecialToken)));
        Self::from_labels(labels)
    }

    /// True when `other` begins with exactly this table.
    pub fn is_prefix_of(&self, other: &SymbolTable) -> bool {
        self.symbols.len() <= other.symbols.len()
            && self.symbols.iter().zip(&other.symbols).all(|(a, b)| a == b)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[PhonemeSymbol] {
        &self.symbols
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.lookup.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(|s| s.text.as_str())
    }

    pub fn pause_id(&self) -> usize {
        self.lookup[PAUSE]
    }

    pub fn contains(&self, label: &str) -> bool {
        self.lookup.contains_key(label)
    }

    pub fn encode<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        labels
            .iter()
            .enumerate()
            .map(|(position, l)| {
                self.id(l.as_ref()).ok_or_else(|| Error::UnknownLabel {
                    label: l.as_ref().to_string(),
                    position,
                })
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.label(id)
                    .map(ToString::to_string)
                    .ok_or_else(|| Error::InvalidInput(format!("symbol id {id} out of range")))
            })
            .collect()
    }

    /// `id<TAB>label<TAB>kind` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.symbols {
            out.push_str(&format!("{}\t{}\t{}\n", s.id, s.text, s.kind.as_str()));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut labels = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, label, kind] = fields[..] else {
                return Err(Error::Config(format!("symbol table line {}: bad field count", n + 1)));
            };
            if id.parse::<usize>().ok() != Some(labels.len()) {
                return Err(Error::Config(format!("symbol table line {}: ids not contiguous", n + 1)));
            }
            let kind = SymbolKind::parse(kind)
                .ok_or_else(|| Error::Config(format!("symbol table line {}: bad kind", n + 1)))?;
            labels.push((label.to_string(), kind));
        }
        Self::from_labels(labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn s(v: &str) -> Vec<String> {
        v.split_whitespace().map(ToString::to_string).collect()
    }

    fn entry(speaker: &str, token: &str, filler: &str) -> FillerEntry {
        FillerEntry {
            speaker: speaker.into(),
            token: token.into(),
            filler: s(filler),
        }
    }

    fn comedians() -> FillerRegistry {
        FillerRegistry::new(vec![
            entry("A", "<spc2>", "er2"),
            entry("B", "<spc1>", "n i3 zh ii1 d ao4 b a5"),
        ])
        .unwrap()
    }

    #[test]
    fn table_one_example() {
        let raw = s("uo3 zh a3 ng d e2 t i3 ng h ao3 d e5 n i3 zh ii1 d ao4 b a5");
        let out = replace_fillers(&raw, "B", &comedians()).unwrap();
        assert_eq!(out, s("uo3 zh a3 ng d e2 t i3 ng h ao3 d e5 <spc1>"));
        // Same phonemes are ordinary for speaker A.
        assert_eq!(replace_fillers(&raw, "A", &comedians()).unwrap(), raw);
        assert_eq!(
            expand_special_tokens(&["<spc1>"], &comedians()).unwrap(),
            s("n i3 zh ii1 d ao4 b a5")
        );
    }

    #[test]
    fn same_filler_different_speakers_get_distinct_tokens() {
        let reg = FillerRegistry::new(vec![
            entry("A", "<spc3>", "n i3 zh ii1 d ao4"),
            entry("B", "<spc4>", "n i3 zh ii1 d ao4"),
        ])
        .unwrap();
        let x = s("h ao3 n i3 zh ii1 d ao4");
        assert_eq!(replace_fillers(&x, "A", &reg).unwrap().last().unwrap(), "<spc3>");
        assert_eq!(replace_fillers(&x, "B", &reg).unwrap().last().unwrap(), "<spc4>");
        let dup = FillerRegistry::new(vec![entry("A", "<spc3>", "a"), entry("B", "<spc3>", "b")]);
        assert!(matches!(dup, Err(Error::Config(_))));
    }

    #[test]
    fn registry_rejects_prefix_fillers() {
        let r = FillerRegistry::new(vec![entry("A", "<spc1>", "n i3"), entry("A", "<spc2>", "n i3 h ao3")]);
        assert!(matches!(r, Err(Error::Config(_))));
        // Across speakers a prefix is fine.
        FillerRegistry::new(vec![entry("A", "<spc1>", "n i3"), entry("B", "<spc2>", "n i3 h ao3")]).unwrap();
    }

    #[test]
    fn registry_rejects_bad_tokens() {
        for t in ["spc1", "<spc0>", "<spc>", "<spc01>", "<spcx>"] {
            assert!(FillerRegistry::new(vec![entry("A", t, "a")]).is_err(), "{t}");
        }
    }

    #[test]
    fn registry_text_round_trip() {
        let text = "# speaker\ttoken\tphonemes\nA\t<spc2>\ter2\n\nB\t<spc1>\tn i3 zh ii1 d ao4 b a5\n";
        let reg = FillerRegistry::parse(text).unwrap();
        assert_eq!(reg, comedians());
        assert_eq!(FillerRegistry::parse(&reg.to_text()).unwrap(), reg);
        assert!(FillerRegistry::parse("A\t<spc1>").is_err());
    }

    #[test]
    fn unknown_or_special_input_is_rejected_with_position() {
        let err = replace_fillers(&["a", "b", "<spc1>"], "B", &comedians()).unwrap_err();
        assert_eq!(
            err,
            Error::UnknownLabel {
                label: "<spc1>".into(),
                position: 2
            }
        );
        assert!(matches!(
            expand_special_tokens(&["<spc9>"], &comedians()),
            Err(Error::UnregisteredToken(_))
        ));
    }

    #[test]
    fn empty_registry_is_identity() {
        let x = s("uo3 sp er2 a");
        assert_eq!(replace_fillers(&x, "Z", &comedians()).unwrap(), x);
        assert_eq!(replace_fillers(&x, "A", &FillerRegistry::empty()).unwrap(), x);
    }

    #[test]
    fn split_filler_does_not_match() {
        let x = s("n i3 sp zh ii1 d ao4 b a5");
        assert_eq!(replace_fillers(&x, "B", &comedians()).unwrap(), x);
    }

    #[test]
    fn symbol_table_layout() {
        let base: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let reg = FillerRegistry::new(vec![entry("B", "<spc1>", "p1 p2"), entry("A", "<spc2>", "p3")]).unwrap();
        let t = SymbolTable::build(&base, &reg).unwrap();
        assert_eq!(t.len(), 13);
        assert_eq!(t.id("sp"), Some(10));
        assert_eq!(t.symbols()[10].kind, SymbolKind::Pause);
        assert_eq!(t.id("<spc1>"), Some(11));
        assert_eq!(t.id("<spc2>"), Some(12));
        for (i, sym) in t.symbols().iter().enumerate() {
            assert_eq!(sym.id, i);
            assert_eq!(t.id(&sym.text), Some(i));
        }
        let plain = SymbolTable::build(&base, &FillerRegistry::empty()).unwrap();
        assert_eq!(plain.len(), 11);
        assert!(plain.is_prefix_of(&plain.extended_with(&reg).unwrap()));

        let again = SymbolTable::build(&base, &reg).unwrap();
        assert_eq!(t.to_text().as_bytes(), again.to_text().as_bytes());
        assert_eq!(SymbolTable::from_text(&t.to_text()).unwrap(), t);

        let clash = SymbolTable::build(&["a", "a"], &reg);
        assert!(matches!(clash, Err(Error::Config(_))));
        assert!(SymbolTable::build::<&str>(&[], &reg).is_err());
    }

    #[test]
    fn encode_reports_position() {
        let t = SymbolTable::build(&["a", "b"], &FillerRegistry::empty()).unwrap();
        assert_eq!(t.encode(&["a", "sp", "b"]).unwrap(), vec![0, 2, 1]);
        assert_eq!(
            t.encode(&["a", "zz"]).unwrap_err(),
            Error::UnknownLabel {
                label: "zz".into(),
                position: 1
            }
        );
    }

    /// Enumerates every way to cut `x` into pieces that are either a single
    /// label or a registered filler, then keeps the parse that, compared
    /// piece by piece from the left, first takes the longer piece (a match
    /// beats a bare label of equal length).
    fn oracle_replace(x: &[String], speaker: &str, reg: &FillerRegistry) -> Vec<String> {
        #[derive(Clone)]
        struct Piece {
            len: usize,
            matched: bool,
            out: String,
        }
        fn parses(x: &[String], fillers: &[&FillerEntry]) -> Vec<Vec<Piece>> {
            if x.is_empty() {
                return vec![Vec::new()];
            }
            let mut all = Vec::new();
            let mut firsts = vec![Piece {
                len: 1,
                matched: false,
                out: x[0].clone(),
            }];
            for e in fillers {
                if x.starts_with(&e.filler) {
                    firsts.push(Piece {
                        len: e.filler.len(),
                        matched: true,
                        out: e.token.clone(),
                    });
                }
            }
            for p in firsts {
                for mut rest in parses(&x[p.len..], fillers) {
                    rest.insert(0, p.clone());
                    all.push(rest);
                }
            }
            all
        }
        let fillers: Vec<&FillerEntry> = reg.for_speaker(speaker).collect();
        let key = |p: &Vec<Piece>| -> Vec<(usize, bool)> { p.iter().map(|q| (q.len, q.matched)).collect() };
        let best = parses(x, &fillers)
            .into_iter()
            .max_by(|a, b| key(a).cmp(&key(b)))
            .unwrap();
        best.into_iter().map(|p| p.out).collect()
    }

    fn overlap_registry() -> FillerRegistry {
        FillerRegistry::new(vec![
            entry("S", "<spc1>", "a b"),
            entry("S", "<spc2>", "b c"),
            entry("S", "<spc3>", "c a b d"),
            entry("S", "<spc4>", "d"),
            entry("T", "<spc5>", "a b c"),
        ])
        .unwrap()
    }

    #[test]
    fn overlapping_candidates_match_oracle() {
        let reg = overlap_registry();
        let x = s("a b c");
        assert_eq!(replace_fillers(&x, "S", &reg).unwrap(), s("<spc1> c"));
        assert_eq!(oracle_replace(&x, "S", &reg), s("<spc1> c"));
        let y = s("b c a b d");
        assert_eq!(replace_fillers(&y, "S", &reg).unwrap(), oracle_replace(&y, "S", &reg));
    }

    fn fixture_seq(max: usize) -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "sp"]), 0..=max)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn replacement_agrees_with_enumeration(x in fixture_seq(10), spk in prop::sample::select(vec!["S", "T", "U"])) {
            let reg = overlap_registry();
            prop_assert_eq!(replace_fillers(&x, spk, &reg).unwrap(), oracle_replace(&x, spk, &reg));
        }

        #[test]
        fn expand_inverts_replace(x in fixture_seq(12), spk in prop::sample::select(vec!["S", "T"])) {
            let reg = overlap_registry();
            let r = replace_fillers(&x, spk, &reg).unwrap();
            prop_assert!(r.len() <= x.len());
            let saved: usize = r
                .iter()
                .filter_map(|l| reg.by_token(l))
                .map(|e| e.filler.len() - 1)
                .sum();
            prop_assert_eq!(x.len() - r.len(), saved);
            prop_assert_eq!(expand_special_tokens(&r, &reg).unwrap(), x);
        }
    }
}
