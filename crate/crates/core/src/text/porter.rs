//! The Porter suffix-stripping stemmer, with the two revisions carried by
//! Martin Porter's own reference implementation (`bli -> ble` in place of
//! `abli -> able`, and the extra `logi -> log` rule).
//!
//! Words of one or two characters are returned unchanged. Any character
//! other than `a e i o u` (and `y` after a vowel) counts as a consonant.

/// Stems a single lowercase word.
pub fn stem(word: &str) -> String {
    let mut w: Vec<char> = word.chars().collect();
    if w.len() <= 2 {
        return word.to_string();
    }
    step1a(&mut w);
    step1b(&mut w);
    step1c(&mut w);
    step2(&mut w);
    step3(&mut w);
    step4(&mut w);
    step5a(&mut w);
    step5b(&mut w);
    w.into_iter().collect()
}

fn is_vowel_letter(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

/// Consonant flags for every position.
fn consonants(w: &[char]) -> Vec<bool> {
    let mut flags: Vec<bool> = Vec::with_capacity(w.len());
    for (i, &c) in w.iter().enumerate() {
        let cons = if is_vowel_letter(c) {
            false
        } else if c == 'y' {
            i == 0 || !flags[i - 1]
        } else {
            true
        };
        flags.push(cons);
    }
    flags
}

/// Number of vowel-consonant sequences, the `m` in `[C](VC)^m[V]`.
fn measure(stem: &[char]) -> usize {
    let flags = consonants(stem);
    flags.windows(2).filter(|p| !p[0] && p[1]).count()
}

fn has_vowel(stem: &[char]) -> bool {
    consonants(stem).iter().any(|c| !c)
}

fn ends_double_consonant(w: &[char]) -> bool {
    let n = w.len();
    n >= 2 && w[n - 1] == w[n - 2] && consonants(w)[n - 1]
}

/// `*o`: ends consonant-vowel-consonant, the last not `w`, `x` or `y`.
fn ends_cvc(w: &[char]) -> bool {
    let n = w.len();
    if n < 3 {
        return false;
    }
    let flags = consonants(w);
    flags[n - 3] && !flags[n - 2] && flags[n - 1] && !matches!(w[n - 1], 'w' | 'x' | 'y')
}

fn ends_with(w: &[char], suffix: &str) -> bool {
    let n = suffix.chars().count();
    n <= w.len() && w[w.len() - n..].iter().copied().eq(suffix.chars())
}

fn strip<'a>(w: &'a [char], suffix: &str) -> &'a [char] {
    &w[..w.len() - suffix.chars().count()]
}

fn replace(w: &mut Vec<char>, suffix: &str, replacement: &str) {
    let keep = w.len() - suffix.chars().count();
    w.truncate(keep);
    w.extend(replacement.chars());
}

type Rule = (&'static str, &'static str);

/// Applies the first rule whose suffix matches, if its stem satisfies
/// `cond`. A matching suffix whose condition fails stops the scan.
fn apply_first(w: &mut Vec<char>, rules: &[Rule], cond: impl Fn(&[char]) -> bool) {
    for (suffix, replacement) in rules {
        if ends_with(w, suffix) {
            if cond(strip(w, suffix)) {
                replace(w, suffix, replacement);
            }
            return;
        }
    }
}

fn step1a(w: &mut Vec<char>) {
    apply_first(
        w,
        &[("sses", "ss"), ("ies", "i"), ("ss", "ss"), ("s", "")],
        |_| true,
    );
}

fn step1b(w: &mut Vec<char>) {
    if ends_with(w, "eed") {
        if measure(strip(w, "eed")) > 0 {
            replace(w, "eed", "ee");
        }
        return;
    }
    let removed = ["ed", "ing"]
        .into_iter()
        .find(|s| ends_with(w, s) && has_vowel(strip(w, s)));
    let Some(suffix) = removed else {
        return;
    };
    replace(w, suffix, "");

    for (tail, full) in [("at", "ate"), ("bl", "ble"), ("iz", "ize")] {
        if ends_with(w, tail) {
            replace(w, tail, full);
            return;
        }
    }
    if ends_double_consonant(w) {
        if !matches!(w[w.len() - 1], 'l' | 's' | 'z') {
            w.pop();
        }
        return;
    }
    if measure(w) == 1 && ends_cvc(w) {
        w.push('e');
    }
}

fn step1c(w: &mut [char]) {
    if ends_with(w, "y") && has_vowel(strip(w, "y")) {
        let n = w.len();
        w[n - 1] = 'i';
    }
}

fn step2(w: &mut Vec<char>) {
    const RULES: &[Rule] = &[
        ("ational", "ate"),
        ("tional", "tion"),
        ("enci", "ence"),
        ("anci", "ance"),
        ("izer", "ize"),
        ("bli", "ble"),
        ("alli", "al"),
        ("entli", "ent"),
        ("eli", "e"),
        ("ousli", "ous"),
        ("ization", "ize"),
        ("ation", "ate"),
        ("ator", "ate"),
        ("alism", "al"),
        ("iveness", "ive"),
        ("fulness", "ful"),
        ("ousness", "ous"),
        ("aliti", "al"),
        ("iviti", "ive"),
        ("biliti", "ble"),
        ("logi", "log"),
    ];
    apply_first(w, RULES, |s| measure(s) > 0);
}

fn step3(w: &mut Vec<char>) {
    const RULES: &[Rule] = &[
        ("icate", "ic"),
        ("ative", ""),
        ("alize", "al"),
        ("iciti", "ic"),
        ("ical", "ic"),
        ("ful", ""),
        ("ness", ""),
    ];
    apply_first(w, RULES, |s| measure(s) > 0);
}

fn step4(w: &mut Vec<char>) {
    const SUFFIXES: &[&str] = &[
        "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment", "ent", "ion",
        "ou", "ism", "ate", "iti", "ous", "ive", "ize",
    ];
    for suffix in SUFFIXES {
        if ends_with(w, suffix) {
            let stem = strip(w, suffix);
            let ok =
                measure(stem) > 1 && (*suffix != "ion" || matches!(stem.last(), Some('s' | 't')));
            if ok {
                replace(w, suffix, "");
            }
            return;
        }
    }
}

fn step5a(w: &mut Vec<char>) {
    if ends_with(w, "e") {
        let stem = strip(w, "e");
        let m = measure(stem);
        if m > 1 || (m == 1 && !ends_cvc(stem)) {
            w.pop();
        }
    }
}

fn step5b(w: &mut Vec<char>) {
    if ends_with(w, "ll") && measure(&w[..w.len() - 1]) > 1 {
        w.pop();
    }
}
