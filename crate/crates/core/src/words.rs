//! Free-group words and finite presentations.
//!
//! Words are written as whitespace-separated tokens `name` or `name^k` with
//! `k` a nonzero integer. A presentation file looks like
//!
//! ```text
//! # torus
//! generators: a b
//! relator: a b a^-1 b^-1
//! ```
//!
//! The `generators:` line must come first; blank lines and `#` comments are
//! ignored. Relator order is preserved, and it matters: relator saturation in
//! [`crate::cohomology`] scans relators in file order.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WordError {
    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),
    #[error("malformed exponent in `{0}`")]
    MalformedExponent(String),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    InLine {
        line: usize,
        #[source]
        source: Box<WordError>,
    },
    #[error("invalid presentation: {0}")]
    InvalidPresentation(String),
}

pub type Result<T> = std::result::Result<T, WordError>;

/// A generator raised to `±1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Letter {
    pub generator: usize,
    pub sign: i8,
}

impl Letter {
    pub fn new(generator: usize, sign: i8) -> Self {
        assert!(sign == 1 || sign == -1, "letter sign must be ±1");
        Self { generator, sign }
    }

    pub fn inverse(self) -> Self {
        Self { generator: self.generator, sign: -self.sign }
    }
}

/// A word in the free group. Constructors other than [`Word::from_letters_unreduced`]
/// always return reduced words.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Word {
    letters: Vec<Letter>,
}

impl Word {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_letters(letters: impl IntoIterator<Item = Letter>) -> Self {
        reduce(&Self { letters: letters.into_iter().collect() })
    }

    pub fn from_letters_unreduced(letters: Vec<Letter>) -> Self {
        Self { letters }
    }

    pub fn letters(&self) -> &[Letter] {
        &self.letters
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn is_reduced(&self) -> bool {
        self.letters.windows(2).all(|w| w[0] != w[1].inverse())
    }

    pub fn inverse(&self) -> Self {
        Self { letters: self.letters.iter().rev().map(|l| l.inverse()).collect() }
    }

    /// Reduced product `self · other`.
    pub fn concat(&self, other: &Word) -> Self {
        Self::from_letters(self.letters.iter().chain(&other.letters).copied())
    }

    pub fn max_generator(&self) -> Option<usize> {
        self.letters.iter().map(|l| l.generator).max()
    }

    /// Run-length text form, e.g. `a^2 b^-1`. The empty word renders as `""`.
    pub fn render(&self, generators: &[String]) -> String {
        let mut out: Vec<String> = Vec::new();
        let mut i = 0;
        while i < self.letters.len() {
            let l = self.letters[i];
            let mut j = i;
            while j < self.letters.len() && self.letters[j] == l {
                j += 1;
            }
            let k = (j - i) as i64 * l.sign as i64;
            let name = &generators[l.generator];
            out.push(if k == 1 { name.clone() } else { format!("{name}^{k}") });
            i = j;
        }
        out.join(" ")
    }
}

/// Free reduction by a single left-to-right stack pass.
pub fn reduce(w: &Word) -> Word {
    let mut stack: Vec<Letter> = Vec::with_capacity(w.letters.len());
    for &l in &w.letters {
        if stack.last() == Some(&l.inverse()) {
            stack.pop();
        } else {
            stack.push(l);
        }
    }
    Word { letters: stack }
}

/// Parses whitespace-separated `name` / `name^k` tokens and reduces.
pub fn parse_word(text: &str, generators: &[String]) -> Result<Word> {
    let mut letters = Vec::new();
    for token in text.split_whitespace() {
        let (name, exponent) = match token.split_once('^') {
            Some((name, exp)) => {
                let k: i64 = exp.parse().map_err(|_| WordError::MalformedExponent(token.to_string()))?;
                if k == 0 || name.is_empty() {
                    return Err(WordError::MalformedExponent(token.to_string()));
                }
                (name, k)
            }
            None => (token, 1),
        };
        let generator = generators
            .iter()
            .position(|g| g == name)
            .ok_or_else(|| WordError::UnknownGenerator(name.to_string()))?;
        let letter = Letter::new(generator, exponent.signum() as i8);
        letters.extend(std::iter::repeat(letter).take(exponent.unsigned_abs() as usize));
    }
    Ok(Word::from_letters(letters))
}

/// One entry of the relator expansion: the prefix `s_1^{ε_1}⋯s_{j-1}^{ε_{j-1}} s_j^{ε'_j}`
/// with `ε'_j = 0` for a positive letter and `-1` for a negative one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelatorPrefix {
    pub prefix: Word,
    pub sign: i8,
    pub generator: usize,
}

pub fn relator_prefixes(t: &Word) -> Vec<RelatorPrefix> {
    t.letters
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            let end = if l.sign < 0 { j + 1 } else { j };
            RelatorPrefix {
                prefix: Word::from_letters_unreduced(t.letters[..end].to_vec()),
                sign: l.sign,
                generator: l.generator,
            }
        })
        .collect()
}

/// Generators and relators of a finitely presented group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Presentation {
    generators: Vec<String>,
    relators: Vec<Word>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && !name.contains(['^', '#', ':']) && !name.chars().any(char::is_whitespace)
}

impl Presentation {
    pub fn new(generators: Vec<String>, relators: Vec<Word>) -> Result<Self> {
        if generators.is_empty() {
            return Err(WordError::InvalidPresentation("no generators".into()));
        }
        for (i, g) in generators.iter().enumerate() {
            if !valid_name(g) {
                return Err(WordError::InvalidPresentation(format!("bad generator name `{g}`")));
            }
            if generators[..i].contains(g) {
                return Err(WordError::InvalidPresentation(format!("duplicate generator `{g}`")));
            }
        }
        for (i, r) in relators.iter().enumerate() {
            if r.is_empty() {
                return Err(WordError::InvalidPresentation(format!("relator {i} is empty")));
            }
            if !r.is_reduced() {
                return Err(WordError::InvalidPresentation(format!("relator {i} is not reduced")));
            }
            if r.max_generator().is_some_and(|m| m >= generators.len()) {
                return Err(WordError::InvalidPresentation(format!("relator {i} uses an unknown generator")));
            }
        }
        Ok(Self { generators, relators })
    }

    /// Convenience constructor from text relators.
    pub fn from_strs(generators: &[&str], relators: &[&str]) -> Result<Self> {
        let generators: Vec<String> = generators.iter().map(|s| s.to_string()).collect();
        let relators = relators.iter().map(|r| parse_word(r, &generators)).collect::<Result<Vec<_>>>()?;
        Self::new(generators, relators)
    }

    pub fn generators(&self) -> &[String] {
        &self.generators
    }

    pub fn relators(&self) -> &[Word] {
        &self.relators
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn parse_word(&self, text: &str) -> Result<Word> {
        parse_word(text, &self.generators)
    }

    pub fn render(&self, w: &Word) -> String {
        w.render(&self.generators)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("generators: {}\n", self.generators.join(" "));
        for r in &self.relators {
            out.push_str(&format!("relator: {}\n", self.render(r)));
        }
        out
    }
}

impl FromStr for Presentation {
    type Err = WordError;

    fn from_str(text: &str) -> Result<Self> {
        let mut generators: Option<Vec<String>> = None;
        let mut relators = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, rest)) = content.split_once(':') else {
                return Err(WordError::Syntax { line, message: format!("expected `key: value`, got `{content}`") });
            };
            match (key.trim(), &generators) {
                ("generators", None) => {
                    let names: Vec<String> = rest.split_whitespace().map(String::from).collect();
                    if names.is_empty() {
                        return Err(WordError::Syntax { line, message: "no generators listed".into() });
                    }
                    generators = Some(names);
                }
                ("generators", Some(_)) => {
                    return Err(WordError::Syntax { line, message: "duplicate generators line".into() });
                }
                ("relator", Some(gens)) => {
                    let w = parse_word(rest, gens).map_err(|e| WordError::InLine { line, source: Box::new(e) })?;
                    if w.is_empty() {
                        return Err(WordError::Syntax { line, message: "relator reduces to the empty word".into() });
                    }
                    relators.push(w);
                }
                ("relator", None) => {
                    return Err(WordError::Syntax { line, message: "relator before generators line".into() });
                }
                (other, _) => {
                    return Err(WordError::Syntax { line, message: format!("unknown key `{other}`") });
                }
            }
        }
        let generators =
            generators.ok_or(WordError::Syntax { line: 0, message: "missing generators line".into() })?;
        Self::new(generators, relators)
    }
}

impl fmt::Display for Presentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rels: Vec<String> = self.relators.iter().map(|r| self.render(r)).collect();
        write!(f, "⟨{} | {}⟩", self.generators.join(", "), rels.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gens(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn l(g: usize, s: i8) -> Letter {
        Letter::new(g, s)
    }

    #[test]
    fn parse_examples() {
        let g = gens(&["a", "b"]);
        assert!(parse_word("a a^-1", &g).unwrap().is_empty());
        assert_eq!(parse_word("a b^-1", &g).unwrap().letters(), &[l(0, 1), l(1, -1)]);
        assert_eq!(
            parse_word("a^2 b^-3", &g).unwrap().letters(),
            &[l(0, 1), l(0, 1), l(1, -1), l(1, -1), l(1, -1)]
        );
        assert!(parse_word("", &g).unwrap().is_empty());
    }

    #[test]
    fn parse_errors() {
        let g = gens(&["a", "b"]);
        assert_eq!(parse_word("c", &g), Err(WordError::UnknownGenerator("c".into())));
        assert!(matches!(parse_word("a^x", &g), Err(WordError::MalformedExponent(_))));
        assert!(matches!(parse_word("a^0", &g), Err(WordError::MalformedExponent(_))));
        assert!(matches!(parse_word("^2", &g), Err(WordError::MalformedExponent(_))));
    }

    #[test]
    fn reduce_examples() {
        let w = Word::from_letters_unreduced(vec![l(0, 1), l(0, -1)]);
        assert!(reduce(&w).is_empty());
        let w = Word::from_letters_unreduced(vec![l(0, 1), l(1, 1), l(1, -1), l(0, -1), l(1, 1)]);
        assert_eq!(reduce(&w).letters(), &[l(1, 1)]);
    }

    #[test]
    fn prefix_examples() {
        let p = relator_prefixes(&Word::from_letters([l(0, 1)]));
        assert_eq!(p, vec![RelatorPrefix { prefix: Word::empty(), sign: 1, generator: 0 }]);
        let p = relator_prefixes(&Word::from_letters([l(0, -1)]));
        assert_eq!(p[0].prefix.letters(), &[l(0, -1)]);
        assert_eq!(p[0].sign, -1);

        let g = gens(&["a", "b"]);
        let t = parse_word("a b a^-1 b^-1", &g).unwrap();
        let p = relator_prefixes(&t);
        let rendered: Vec<(String, i8, usize)> =
            p.iter().map(|e| (e.prefix.render(&g), e.sign, e.generator)).collect();
        assert_eq!(
            rendered,
            vec![
                ("".into(), 1, 0),
                ("a".into(), 1, 1),
                ("a b a^-1".into(), -1, 0),
                ("a b a^-1 b^-1".into(), -1, 1)
            ]
        );
    }

    #[test]
    fn render_round_trip() {
        let g = gens(&["x", "y"]);
        let w = parse_word("x^3 y^-2 x", &g).unwrap();
        assert_eq!(w.render(&g), "x^3 y^-2 x");
        assert_eq!(parse_word(&w.render(&g), &g).unwrap(), w);
    }

    #[test]
    fn parse_presentation_file() {
        let text = "# torus\n\ngenerators: a b\nrelator: a b a^-1 b^-1  # commutator\n";
        let p: Presentation = text.parse().unwrap();
        assert_eq!(p.generators(), &["a".to_string(), "b".to_string()]);
        assert_eq!(p.relators().len(), 1);
        assert_eq!(p.to_text().parse::<Presentation>().unwrap(), p);
    }

    #[test]
    fn presentation_errors_carry_lines() {
        let err = "generators: a\nrelator: a b\n".parse::<Presentation>().unwrap_err();
        assert!(matches!(err, WordError::InLine { line: 2, .. }), "{err:?}");
        let err = "relator: a\n".parse::<Presentation>().unwrap_err();
        assert!(matches!(err, WordError::Syntax { line: 1, .. }));
        let err = "generators: a\nrelator: a a^-1\n".parse::<Presentation>().unwrap_err();
        assert!(matches!(err, WordError::Syntax { line: 2, .. }));
        let err = "generators: a a\n".parse::<Presentation>().unwrap_err();
        assert!(matches!(err, WordError::InvalidPresentation(_)));
        assert!("".parse::<Presentation>().is_err());
        assert!("generators: a\nrelations: a\n".parse::<Presentation>().is_err());
    }

    #[test]
    fn no_relators_is_free() {
        let p: Presentation = "generators: a b".parse().unwrap();
        assert!(p.relators().is_empty());
    }
}
