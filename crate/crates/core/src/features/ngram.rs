//! Character sets and 3-gram frequency vectors.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Window width of the featurizer.
pub const GRAM_LEN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CharsetId {
    /// `a-z A-Z 0-9 _ $ \`, the characters legal in Java identifiers.
    IdentifierSet,
    /// Code points 0..=127.
    AsciiSet,
}

impl fmt::Display for CharsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CharsetId::IdentifierSet => "identifier-set",
            CharsetId::AsciiSet => "ascii-set",
        })
    }
}

/// An ordered, duplicate-free alphabet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Charset {
    id: CharsetId,
    members: Vec<char>,
}

impl Charset {
    pub fn identifier() -> Self {
        let members = ('a'..='z')
            .chain('A'..='Z')
            .chain('0'..='9')
            .chain(['_', '$', '\\'])
            .collect();
        Charset {
            id: CharsetId::IdentifierSet,
            members,
        }
    }

    pub fn ascii() -> Self {
        Charset {
            id: CharsetId::AsciiSet,
            members: (0u8..=127).map(char::from).collect(),
        }
    }

    pub fn for_id(id: CharsetId) -> Self {
        match id {
            CharsetId::IdentifierSet => Self::identifier(),
            CharsetId::AsciiSet => Self::ascii(),
        }
    }

    pub fn id(&self) -> CharsetId {
        self.id
    }

    pub fn members(&self) -> &[char] {
        &self.members
    }

    pub fn contains(&self, c: char) -> bool {
        match self.id {
            CharsetId::IdentifierSet => c.is_ascii_alphanumeric() || matches!(c, '_' | '$' | '\\'),
            CharsetId::AsciiSet => c.is_ascii(),
        }
    }
}

/// Three consecutive characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Gram(pub [char; GRAM_LEN]);

impl Gram {
    pub fn chars(&self) -> [char; GRAM_LEN] {
        self.0
    }
}

impl fmt::Display for Gram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.iter().try_for_each(|c| write!(f, "{c}"))
    }
}

impl FromStr for Gram {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let chars: Vec<char> = s.chars().collect();
        <[char; GRAM_LEN]>::try_from(chars)
            .map(Gram)
            .map_err(|_| format!("`{s}` is not a {GRAM_LEN}-character gram"))
    }
}

impl Serialize for Gram {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Gram {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sparse gram -> frequency map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub charset: CharsetId,
    pub counts: BTreeMap<Gram, f64>,
    pub normalized: bool,
}

impl FeatureVector {
    pub fn empty(charset: CharsetId) -> Self {
        FeatureVector {
            charset,
            counts: BTreeMap::new(),
            normalized: true,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.counts.values().sum()
    }
}

/// Raw gram counts: each string is split at characters outside `charset`
/// and every segment is windowed on its own.
pub fn count_grams<S: AsRef<str>>(names: &[S], charset: &Charset) -> BTreeMap<Gram, u64> {
    fn flush(segment: &mut Vec<char>, counts: &mut BTreeMap<Gram, u64>) {
        for w in segment.windows(GRAM_LEN) {
            *counts.entry(Gram([w[0], w[1], w[2]])).or_insert(0) += 1;
        }
        segment.clear();
    }

    let mut counts = BTreeMap::new();
    let mut segment: Vec<char> = Vec::new();
    for name in names {
        for c in name.as_ref().chars() {
            if charset.contains(c) {
                segment.push(c);
            } else {
                flush(&mut segment, &mut counts);
            }
        }
        flush(&mut segment, &mut counts);
    }
    counts
}

/// Normalized 3-gram frequency vector of `names`.
pub fn featurize<S: AsRef<str>>(names: &[S], charset: &Charset) -> FeatureVector {
    let counts = count_grams(names, charset);
    let total: u64 = counts.values().sum();
    FeatureVector {
        charset: charset.id(),
        counts: counts
            .into_iter()
            .map(|(g, c)| (g, c as f64 / total as f64))
            .collect(),
        normalized: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grams(v: &FeatureVector) -> Vec<String> {
        v.counts.keys().map(Gram::to_string).collect()
    }

    #[test]
    fn footnote_example() {
        let v = featurize(&["abcdefgh"], &Charset::identifier());
        assert_eq!(grams(&v), ["abc", "bcd", "cde", "def", "efg", "fgh"]);
        for f in v.counts.values() {
            assert!((f - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_and_short() {
        let v = featurize(&["aaa"], &Charset::identifier());
        assert_eq!(v.counts.get(&"aaa".parse().unwrap()), Some(&1.0));
        let v = featurize(&["ab"], &Charset::identifier());
        assert!(v.is_empty());
        assert_eq!(v.total(), 0.0);
    }

    #[test]
    fn separators_split_segments() {
        let v = featurize(&["a.b.c"], &Charset::identifier());
        assert!(v.is_empty());
        let v = featurize(&["com.example"], &Charset::identifier());
        assert!(!grams(&v).iter().any(|g| g.contains('.')));
        assert!(v.counts.contains_key(&"com".parse().unwrap()));
    }

    #[test]
    fn no_cross_string_grams() {
        let v = featurize(&["ab", "cd"], &Charset::identifier());
        assert!(v.is_empty());
    }

    #[test]
    fn nul_is_an_ascii_member() {
        let v = featurize(&["a\u{0}b"], &Charset::ascii());
        assert_eq!(grams(&v), ["a\u{0}b"]);
    }

    #[test]
    fn charset_sizes() {
        assert_eq!(Charset::identifier().members().len(), 65);
        assert_eq!(Charset::ascii().members().len(), 128);
        let id = Charset::identifier();
        assert!(id.members().iter().all(|&c| id.contains(c)));
        assert!(!id.contains('.') && !id.contains('È'));
    }
}
