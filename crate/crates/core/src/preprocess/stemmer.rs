//! Snowball English ("Porter2") stemmer.
//!
//! A direct transcription of the Snowball `english` algorithm. The word is
//! processed as a sequence of `char`s so non-ASCII input is handled the same
//! way the reference implementation handles UTF-8 text. Suffix lookups follow
//! Snowball `among` semantics: the longest matching suffix is selected first
//! and its condition is then tested; a failing condition does not fall back to
//! a shorter suffix.

const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u', 'y'];

fn is_vowel(c: char) -> bool {
    VOWELS.contains(&c)
}

fn is_vowel_wxy(c: char) -> bool {
    is_vowel(c) || matches!(c, 'w' | 'x' | 'Y')
}

fn is_valid_li(c: char) -> bool {
    matches!(c, 'c' | 'd' | 'e' | 'g' | 'h' | 'k' | 'm' | 'n' | 'r' | 't')
}

/// Whole-word exceptions checked before any other processing.
const EXCEPTIONS_1: &[(&str, &str)] = &[
    ("skis", "ski"),
    ("skies", "sky"),
    ("dying", "die"),
    ("lying", "lie"),
    ("tying", "tie"),
    ("idly", "idl"),
    ("gently", "gentl"),
    ("ugly", "ugli"),
    ("early", "earli"),
    ("only", "onli"),
    ("singly", "singl"),
    ("sky", "sky"),
    ("news", "news"),
    ("howe", "howe"),
    ("atlas", "atlas"),
    ("cosmos", "cosmos"),
    ("bias", "bias"),
    ("andes", "andes"),
];

/// Words left alone once step 1a has run.
const EXCEPTIONS_2: &[&str] = &[
    "inning", "outing", "canning", "herring", "earring", "proceed", "exceed", "succeed",
];

const REGION_PREFIXES: &[&str] = &["gener", "commun", "arsen"];

/// Returns the Porter2 stem of `word`.
///
/// The input is expected to be lowercase. Words shorter than three characters
/// are returned unchanged.
pub fn stem(word: &str) -> String {
    if let Some((_, out)) = EXCEPTIONS_1.iter().find(|(w, _)| *w == word) {
        return (*out).to_string();
    }
    let mut w: Vec<char> = word.chars().collect();
    if w.len() < 3 {
        return word.to_string();
    }

    let y_found = prelude(&mut w);
    let (p1, p2) = mark_regions(&w);
    let mut s = Stemmer { w, p1, p2 };

    s.step_1a();
    if !s.is_exception_2() {
        s.step_1b();
        s.step_1c();
        s.step_2();
        s.step_3();
        s.step_4();
        s.step_5();
    }

    let mut out: String = s.w.into_iter().collect();
    if y_found {
        out = out.replace('Y', "y");
    }
    out
}

fn prelude(w: &mut Vec<char>) -> bool {
    let mut y_found = false;
    if w.first() == Some(&'\'') {
        w.remove(0);
    }
    if w.first() == Some(&'y') {
        w[0] = 'Y';
        y_found = true;
    }
    for i in 1..w.len() {
        if w[i] == 'y' && is_vowel(w[i - 1]) {
            w[i] = 'Y';
            y_found = true;
        }
    }
    y_found
}

/// Position just past the first non-vowel that follows a vowel, at or after `from`.
fn region_start(w: &[char], from: usize) -> Option<usize> {
    let vowel = (from..w.len()).find(|&i| is_vowel(w[i]))?;
    let consonant = (vowel + 1..w.len()).find(|&i| !is_vowel(w[i]))?;
    Some(consonant + 1)
}

fn mark_regions(w: &[char]) -> (usize, usize) {
    let limit = w.len();
    let prefix = REGION_PREFIXES.iter().find_map(|p| {
        let pc: Vec<char> = p.chars().collect();
        w.starts_with(&pc).then_some(pc.len())
    });
    let p1 = match prefix {
        Some(len) => len,
        None => match region_start(w, 0) {
            Some(p) => p,
            None => return (limit, limit),
        },
    };
    let p2 = region_start(w, p1).unwrap_or(limit);
    (p1, p2)
}

struct Stemmer {
    w: Vec<char>,
    p1: usize,
    p2: usize,
}

impl Stemmer {
    fn ends_with(&self, suffix: &str) -> bool {
        let n = suffix.chars().count();
        n <= self.w.len() && self.w[self.w.len() - n..].iter().copied().eq(suffix.chars())
    }

    /// Longest suffix of the word found in `candidates`, with its start index.
    fn longest_suffix<'a>(&self, candidates: &[&'a str]) -> Option<(&'a str, usize)> {
        candidates
            .iter()
            .filter(|s| self.ends_with(s))
            .max_by_key(|s| s.chars().count())
            .map(|s| (*s, self.w.len() - s.chars().count()))
    }

    fn replace_from(&mut self, start: usize, with: &str) {
        self.w.truncate(start);
        self.w.extend(with.chars());
    }

    fn char_before(&self, pos: usize) -> Option<char> {
        pos.checked_sub(1).map(|i| self.w[i])
    }

    fn has_vowel_before(&self, pos: usize) -> bool {
        self.w[..pos].iter().any(|&c| is_vowel(c))
    }

    /// Short syllable ending at `pos`.
    fn short_syllable_at(&self, pos: usize) -> bool {
        let w = &self.w;
        if pos >= 3 && !is_vowel_wxy(w[pos - 1]) && is_vowel(w[pos - 2]) && !is_vowel(w[pos - 3]) {
            return true;
        }
        pos == 2 && !is_vowel(w[1]) && is_vowel(w[0])
    }

    fn step_1a(&mut self) {
        if let Some((_, start)) = self.longest_suffix(&["'", "'s", "'s'"]) {
            self.w.truncate(start);
        }
        let Some((suffix, start)) = self.longest_suffix(&["sses", "ied", "ies", "s", "us", "ss"])
        else {
            return;
        };
        match suffix {
            "sses" => self.replace_from(start, "ss"),
            "ied" | "ies" => {
                let with = if start >= 2 { "i" } else { "ie" };
                self.replace_from(start, with);
            }
            "s"
                // the letter immediately before the s does not count
                if start >= 1 && self.has_vowel_before(start - 1) => {
                    self.w.truncate(start);
                }
            _ => {}
        }
    }

    fn is_exception_2(&self) -> bool {
        let word: String = self.w.iter().collect();
        EXCEPTIONS_2.contains(&word.as_str())
    }

    fn step_1b(&mut self) {
        let Some((suffix, start)) =
            self.longest_suffix(&["eed", "eedly", "ed", "edly", "ing", "ingly"])
        else {
            return;
        };
        match suffix {
            "eed" | "eedly" => {
                if start >= self.p1 {
                    self.replace_from(start, "ee");
                }
            }
            _ => {
                if !self.has_vowel_before(start) {
                    return;
                }
                self.w.truncate(start);
                const DOUBLES: &[&str] = &["bb", "dd", "ff", "gg", "mm", "nn", "pp", "rr", "tt"];
                if self.ends_with("at") || self.ends_with("bl") || self.ends_with("iz") {
                    self.w.push('e');
                } else if DOUBLES.iter().any(|d| self.ends_with(d)) {
                    self.w.pop();
                } else {
                    let end = self.w.len();
                    if end == self.p1 && self.short_syllable_at(end) {
                        self.w.push('e');
                    }
                }
            }
        }
    }

    fn step_1c(&mut self) {
        let n = self.w.len();
        if n >= 3 && matches!(self.w[n - 1], 'y' | 'Y') && !is_vowel(self.w[n - 2]) {
            self.w[n - 1] = 'i';
        }
    }

    fn step_2(&mut self) {
        const SUFFIXES: &[&str] = &[
            "tional", "enci", "anci", "abli", "entli", "izer", "ization", "ational", "ation",
            "ator", "alism", "aliti", "alli", "fulness", "ousli", "ousness", "iveness", "iviti",
            "biliti", "bli", "ogi", "fulli", "lessli", "li",
        ];
        let Some((suffix, start)) = self.longest_suffix(SUFFIXES) else {
            return;
        };
        if start < self.p1 {
            return;
        }
        let replacement = match suffix {
            "tional" => "tion",
            "enci" => "ence",
            "anci" => "ance",
            "abli" => "able",
            "entli" => "ent",
            "izer" | "ization" => "ize",
            "ational" | "ation" | "ator" => "ate",
            "alism" | "aliti" | "alli" => "al",
            "fulness" => "ful",
            "ousli" | "ousness" => "ous",
            "iveness" | "iviti" => "ive",
            "biliti" | "bli" => "ble",
            "ogi" => {
                if self.char_before(start) != Some('l') {
                    return;
                }
                "og"
            }
            "fulli" => "ful",
            "lessli" => "less",
            "li" => {
                if !self.char_before(start).is_some_and(is_valid_li) {
                    return;
                }
                ""
            }
            _ => unreachable!("unlisted step 2 suffix"),
        };
        self.replace_from(start, replacement);
    }

    fn step_3(&mut self) {
        const SUFFIXES: &[&str] = &[
            "tional", "ational", "alize", "icate", "iciti", "ical", "ful", "ness", "ative",
        ];
        let Some((suffix, start)) = self.longest_suffix(SUFFIXES) else {
            return;
        };
        if start < self.p1 {
            return;
        }
        match suffix {
            "tional" => self.replace_from(start, "tion"),
            "ational" => self.replace_from(start, "ate"),
            "alize" => self.replace_from(start, "al"),
            "icate" | "iciti" | "ical" => self.replace_from(start, "ic"),
            "ful" | "ness" => self.w.truncate(start),
            "ative" => {
                if start >= self.p2 {
                    self.w.truncate(start);
                }
            }
            _ => unreachable!("unlisted step 3 suffix"),
        }
    }

    fn step_4(&mut self) {
        const SUFFIXES: &[&str] = &[
            "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment", "ent",
            "ism", "ate", "iti", "ous", "ive", "ize", "ion",
        ];
        let Some((suffix, start)) = self.longest_suffix(SUFFIXES) else {
            return;
        };
        if start < self.p2 {
            return;
        }
        if suffix == "ion" && !matches!(self.char_before(start), Some('s' | 't')) {
            return;
        }
        self.w.truncate(start);
    }

    fn step_5(&mut self) {
        let Some((suffix, start)) = self.longest_suffix(&["e", "l"]) else {
            return;
        };
        let delete = match suffix {
            "e" => start >= self.p2 || (start >= self.p1 && !self.short_syllable_at(start)),
            _ => start >= self.p2 && self.char_before(start) == Some('l'),
        };
        if delete {
            self.w.truncate(start);
        }
    }
}
