//! LaTeX flattening that leaves math mode untouched.
//!
//! The model consumes symbols in their source form, so everything between
//! math delimiters (`$...$`, `$$...$$`, `\(...\)`, `\[...\]`, and math
//! environments such as `equation` or `align`) is copied verbatim,
//! delimiters included. Outside math mode:
//!
//! * comments (`%` to end of line) are removed,
//! * commands with reference-like arguments (`\cite`, `\ref`, `\url`, ...)
//!   are removed together with their arguments,
//! * other commands lose their name but keep their braced content
//!   (`\textbf{mass}` becomes `mass`),
//! * bare braces are dropped, `~` becomes a space, `\\` becomes a space,
//!   and escapes like `\%` become their literal character.
//!
//! The output carries a [`CharMap`] from every emitted code point back to
//! the code point it came from, so annotation spans on the original text
//! can be projected onto the flattened text and back. Unbalanced delimiters
//! never fail: the offending segment is passed through unchanged and a
//! warning is recorded.

use serde::{Deserialize, Serialize};

use super::CharSpan;

/// Non-fatal problem found while flattening, with the code-point position
/// where scanning gave up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatexWarning {
    pub position: usize,
    pub message: String,
}

/// Maps code points of a derived text back to the text it was derived from.
/// Positions are strictly increasing, which makes span projection a pair of
/// binary searches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharMap {
    map: Vec<usize>,
}

impl CharMap {
    #[must_use]
    pub fn identity(len: usize) -> Self {
        CharMap {
            map: (0..len).collect(),
        }
    }

    fn from_vec(map: Vec<usize>) -> Self {
        debug_assert!(map.windows(2).all(|w| w[0] < w[1]), "char map must be strictly increasing");
        CharMap { map }
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.map.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Original position of the code point at `clean_idx`.
    #[must_use]
    pub fn to_original(&self, clean_idx: usize) -> usize {
        self.map[clean_idx]
    }

    /// Smallest clean span covering every surviving code point of an
    /// original-text span. `None` when nothing survived.
    #[must_use]
    pub fn project_span(&self, original: &CharSpan) -> Option<CharSpan> {
        let start = self.map.partition_point(|&o| o < original.start);
        let end = self.map.partition_point(|&o| o < original.end);
        (start < end).then(|| CharSpan::new(start, end))
    }

    /// Original-text span covering a non-empty clean span.
    #[must_use]
    pub fn span_to_original(&self, clean: &CharSpan) -> CharSpan {
        assert!(clean.start < clean.end && clean.end <= self.map.len());
        CharSpan::new(self.map[clean.start], self.map[clean.end - 1] + 1)
    }
}

const MATH_ENVIRONMENTS: &[&str] = &[
    "align",
    "align*",
    "alignat",
    "alignat*",
    "cases",
    "displaymath",
    "eqnarray",
    "eqnarray*",
    "equation",
    "equation*",
    "flalign",
    "flalign*",
    "gather",
    "gather*",
    "math",
    "multline",
    "multline*",
    "split",
];

/// Commands whose braced argument is a reference, key, or path rather than
/// prose; dropped together with one optional `[...]` run and one `{...}`.
const DISCARD_ARG_COMMANDS: &[&str] = &[
    "addtocounter",
    "autoref",
    "bibliography",
    "bibliographystyle",
    "cite",
    "citealp",
    "citealt",
    "citeauthor",
    "citep",
    "citet",
    "citeyear",
    "cref",
    "Cref",
    "documentclass",
    "eqref",
    "graphicspath",
    "href",
    "hspace",
    "include",
    "includegraphics",
    "input",
    "label",
    "pageref",
    "ref",
    "RequirePackage",
    "setcounter",
    "url",
    "usepackage",
    "vspace",
];

/// Flattens LaTeX source into plain text plus math segments.
///
/// Returns the flattened text, the map from its code points back to the
/// input, and any warnings for unbalanced constructs (which are passed
/// through unchanged rather than dropped).
#[must_use]
pub fn latex_to_text(input: &str) -> (String, CharMap, Vec<LatexWarning>) {
    let chars: Vec<char> = input.chars().collect();
    let mut f = Flattener {
        chars: &chars,
        out: String::new(),
        map: Vec::new(),
        warnings: Vec::new(),
    };
    f.run();
    (f.out, CharMap::from_vec(f.map), f.warnings)
}

struct Flattener<'a> {
    chars: &'a [char],
    out: String,
    map: Vec<usize>,
    warnings: Vec<LatexWarning>,
}

impl Flattener<'_> {
    fn run(&mut self) {
        let n = self.chars.len();
        let mut i = 0;
        while i < n {
            match self.chars[i] {
                '%' => {
                    while i < n && self.chars[i] != '\n' {
                        i += 1;
                    }
                    if i < n {
                        i += 1;
                    }
                }
                '$' => i = self.handle_dollar(i),
                '\\' => i = self.handle_backslash(i),
                '{' | '}' => i += 1,
                '~' => {
                    self.emit(' ', i);
                    i += 1;
                }
                c => {
                    self.emit(c, i);
                    i += 1;
                }
            }
        }
    }

    fn emit(&mut self, c: char, original: usize) {
        self.out.push(c);
        self.map.push(original);
    }

    fn copy_verbatim(&mut self, start: usize, end: usize) {
        for idx in start..end {
            self.emit(self.chars[idx], idx);
        }
    }

    fn warn(&mut self, position: usize, message: impl Into<String>) {
        self.warnings.push(LatexWarning {
            position,
            message: message.into(),
        });
    }

    /// Math segment that could not be closed: warn and pass the rest of the
    /// document through unchanged.
    fn pass_through_tail(&mut self, start: usize, message: &str) -> usize {
        self.warn(start, message);
        self.copy_verbatim(start, self.chars.len());
        self.chars.len()
    }

    fn handle_dollar(&mut self, i: usize) -> usize {
        let n = self.chars.len();
        if i + 1 < n && self.chars[i + 1] == '$' {
            match self.find_pair(i + 2, '$', '$') {
                Some(end) => {
                    self.copy_verbatim(i, end);
                    end
                }
                None => self.pass_through_tail(i, "unbalanced display math delimiter $$"),
            }
        } else {
            match self.find_single(i + 1, '$') {
                Some(end) => {
                    self.copy_verbatim(i, end);
                    end
                }
                None => self.pass_through_tail(i, "unbalanced math delimiter $"),
            }
        }
    }

    /// Index just past the next unescaped `target`.
    fn find_single(&self, from: usize, target: char) -> Option<usize> {
        let n = self.chars.len();
        let mut j = from;
        while j < n {
            match self.chars[j] {
                '\\' => j += 2,
                c if c == target => return Some(j + 1),
                _ => j += 1,
            }
        }
        None
    }

    /// Index just past the next two-character sequence `a b`. When `a` is
    /// not a backslash, escaped pairs are stepped over; when it is, every
    /// backslash is itself a candidate opener and nothing is skipped.
    fn find_pair(&self, from: usize, a: char, b: char) -> Option<usize> {
        let n = self.chars.len();
        let mut j = from;
        while j + 1 < n {
            if self.chars[j] == a && self.chars[j + 1] == b {
                return Some(j + 2);
            }
            if self.chars[j] == '\\' && a != '\\' {
                j += 2;
            } else {
                j += 1;
            }
        }
        None
    }

    fn handle_backslash(&mut self, i: usize) -> usize {
        let n = self.chars.len();
        if i + 1 >= n {
            self.warn(i, "dangling backslash at end of input");
            return n;
        }
        let next = self.chars[i + 1];
        if next.is_ascii_alphabetic() {
            return self.handle_named_command(i);
        }
        match next {
            '(' => match self.find_pair(i + 2, '\\', ')') {
                Some(end) => {
                    self.copy_verbatim(i, end);
                    end
                }
                None => self.pass_through_tail(i, "unbalanced math delimiter \\("),
            },
            '[' => match self.find_pair(i + 2, '\\', ']') {
                Some(end) => {
                    self.copy_verbatim(i, end);
                    end
                }
                None => self.pass_through_tail(i, "unbalanced math delimiter \\["),
            },
            '\\' => {
                // Row break: acts as whitespace. Swallow a trailing [len].
                self.emit(' ', i);
                let mut j = i + 2;
                if j < n && self.chars[j] == '[' {
                    if let Some(after) = self.skip_optional(j) {
                        j = after;
                    }
                }
                j
            }
            '%' | '$' | '&' | '#' | '_' | '{' | '}' => {
                self.emit(next, i + 1);
                i + 2
            }
            ' ' => {
                self.emit(' ', i + 1);
                i + 2
            }
            // Spacing and accent shorthands contribute nothing.
            _ => i + 2,
        }
    }

    fn handle_named_command(&mut self, i: usize) -> usize {
        let n = self.chars.len();
        let mut j = i + 1;
        while j < n && self.chars[j].is_ascii_alphabetic() {
            j += 1;
        }
        let name: String = self.chars[i + 1..j].iter().collect();
        if j < n && self.chars[j] == '*' {
            j += 1;
        }
        match name.as_str() {
            "begin" => self.handle_begin(i, j),
            "end" => match self.read_env_name(j) {
                Some((_, after)) => after,
                None => j,
            },
            _ if DISCARD_ARG_COMMANDS.contains(&name.as_str()) => {
                let mut k = j;
                while k < n && self.chars[k] == '[' {
                    match self.skip_optional(k) {
                        Some(after) => k = after,
                        None => {
                            self.warn(k, format!("unbalanced optional argument after \\{name}"));
                            return k + 1;
                        }
                    }
                }
                if k < n && self.chars[k] == '{' {
                    match self.skip_group(k) {
                        Some(after) => k = after,
                        None => {
                            self.warn(k, format!("unbalanced argument after \\{name}"));
                            return k + 1;
                        }
                    }
                }
                k
            }
            // Formatting commands: drop the name, keep what follows. The
            // brace handler in the main loop keeps their content.
            _ => j,
        }
    }

    fn handle_begin(&mut self, i: usize, j: usize) -> usize {
        let Some((env, after)) = self.read_env_name(j) else {
            return j;
        };
        if !MATH_ENVIRONMENTS.contains(&env.as_str()) {
            // Swallow placement options like \begin{figure}[h].
            let mut k = after;
            while k < self.chars.len() && self.chars[k] == '[' {
                match self.skip_optional(k) {
                    Some(a) => k = a,
                    None => return after,
                }
            }
            return k;
        }
        match self.find_end_env(after, &env) {
            Some(end) => {
                self.copy_verbatim(i, end);
                end
            }
            None => self.pass_through_tail(i, format!("unclosed math environment {env}").as_str()),
        }
    }

    /// Reads `{name}` at `j`; names are letters, digits, and `*`.
    fn read_env_name(&self, j: usize) -> Option<(String, usize)> {
        let n = self.chars.len();
        if j >= n || self.chars[j] != '{' {
            return None;
        }
        let mut k = j + 1;
        let mut name = String::new();
        while k < n {
            let c = self.chars[k];
            if c == '}' {
                return Some((name, k + 1));
            }
            if c.is_ascii_alphanumeric() || c == '*' {
                name.push(c);
                k += 1;
            } else {
                return None;
            }
        }
        None
    }

    /// Index just past the literal `\end{env}` matching a math environment.
    fn find_end_env(&self, from: usize, env: &str) -> Option<usize> {
        let pattern: Vec<char> = format!("\\end{{{env}}}").chars().collect();
        let n = self.chars.len();
        if pattern.len() > n {
            return None;
        }
        (from..=n - pattern.len())
            .find(|&j| self.chars[j..j + pattern.len()] == pattern[..])
            .map(|j| j + pattern.len())
    }

    /// Skips a balanced `{...}` group starting at `k`.
    fn skip_group(&self, k: usize) -> Option<usize> {
        let n = self.chars.len();
        debug_assert_eq!(self.chars[k], '{');
        let mut depth = 0usize;
        let mut j = k;
        while j < n {
            match self.chars[j] {
                '\\' => j += 2,
                '{' => {
                    depth += 1;
                    j += 1;
                }
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(j + 1);
                    }
                    j += 1;
                }
                _ => j += 1,
            }
        }
        None
    }

    /// Skips `[...]` starting at `k`, stepping over nested brace groups.
    fn skip_optional(&self, k: usize) -> Option<usize> {
        let n = self.chars.len();
        debug_assert_eq!(self.chars[k], '[');
        let mut j = k + 1;
        while j < n {
            match self.chars[j] {
                '\\' => j += 2,
                '{' => j = self.skip_group(j)?,
                ']' => return Some(j + 1),
                _ => j += 1,
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-flattened references: each pair was worked out character by
    /// character against the rules in the module docs.
    const FIXTURES: &[(&str, &str)] = &[
        ("\\textbf{mass} $m$", "mass $m$"),
        ("let $x$ be the value", "let $x$ be the value"),
        ("50\\% of $n$", "50% of $n$"),
        ("A~B", "A B"),
        ("% full line comment\nnext", "next"),
        ("pre % trailing\npost", "pre post"),
        ("\\section{Intro} body", "Intro body"),
        ("\\section*{Intro} body", "Intro body"),
        ("\\cite{k1} shows", " shows"),
        ("see \\cite[p.~3]{k} now", "see  now"),
        (
            "\\begin{abstract}We study $f$.\\end{abstract}",
            "We study $f$.",
        ),
        (
            "\\begin{equation}E = mc^2\\end{equation}",
            "\\begin{equation}E = mc^2\\end{equation}",
        ),
        ("\\[ x \\]", "\\[ x \\]"),
        ("\\( y \\) ok", "\\( y \\) ok"),
        ("$$z$$ done", "$$z$$ done"),
        ("a\\\\b", "a b"),
        ("\\emph{very} important", "very important"),
        ("f\\_1 and x\\&y", "f_1 and x&y"),
        ("\\url{http://ex.com} link", " link"),
        ("{nested {braces} kept}", "nested braces kept"),
    ];

    /// Every emitted code point must trace back to an identical input code
    /// point, except the deliberate space substitutions for `~` and `\\`.
    fn check_map(input: &str, clean: &str, map: &CharMap) {
        let original: Vec<char> = input.chars().collect();
        let clean_chars: Vec<char> = clean.chars().collect();
        assert_eq!(map.len(), clean_chars.len());
        let mut prev: Option<usize> = None;
        for (i, &c) in clean_chars.iter().enumerate() {
            let o = map.to_original(i);
            if let Some(p) = prev {
                assert!(o > p, "char map must be strictly increasing");
            }
            prev = Some(o);
            let src = original[o];
            assert!(
                src == c || (c == ' ' && (src == '~' || src == '\\')),
                "clean[{i}]={c:?} maps to original[{o}]={src:?} in {input:?}"
            );
        }
    }

    #[test]
    fn fixtures_flatten_exactly() {
        for (input, expected) in FIXTURES {
            let (clean, map, _) = latex_to_text(input);
            assert_eq!(&clean, expected, "input {input:?}");
            check_map(input, &clean, &map);
        }
    }

    #[test]
    fn fixtures_produce_no_warnings() {
        for (input, _) in FIXTURES {
            let (_, _, warnings) = latex_to_text(input);
            assert!(warnings.is_empty(), "input {input:?} warned {warnings:?}");
        }
    }

    #[test]
    fn unbalanced_dollar_passes_through_with_warning() {
        let input = "broken $x + y";
        let (clean, _, warnings) = latex_to_text(input);
        assert_eq!(clean, "broken $x + y");
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].position, 7);
    }

    #[test]
    fn unclosed_math_environment_passes_through_with_warning() {
        let input = "a \\begin{align} x = y";
        let (clean, _, warnings) = latex_to_text(input);
        assert_eq!(clean, "a \\begin{align} x = y");
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn escaped_dollar_does_not_open_math() {
        let (clean, _, warnings) = latex_to_text("costs \\$5 at most");
        assert_eq!(clean, "costs $5 at most");
        assert!(warnings.is_empty());
    }

    #[test]
    fn comment_inside_math_is_preserved() {
        // Math segments are copied verbatim, `%` included.
        let (clean, _, _) = latex_to_text("$a % b$ x");
        assert_eq!(clean, "$a % b$ x");
    }

    #[test]
    fn projection_round_trips_surviving_spans() {
        let input = "\\textbf{mass} $m$";
        let (_, map, _) = latex_to_text(input);
        // "mass" occupies code points 8..12 of the input.
        let clean = map.project_span(&CharSpan::new(8, 12)).unwrap();
        assert_eq!(clean, CharSpan::new(0, 4));
        assert_eq!(map.span_to_original(&clean), CharSpan::new(8, 12));
        // A span over removed markup narrows to its surviving interior.
        let wide = map.project_span(&CharSpan::new(0, 13)).unwrap();
        assert_eq!(wide, CharSpan::new(0, 4));
        // A span entirely inside removed markup has no projection.
        assert_eq!(map.project_span(&CharSpan::new(0, 7)), None);
    }

    #[test]
    fn identity_map_projects_spans_unchanged() {
        let map = CharMap::identity(10);
        let span = CharSpan::new(3, 7);
        assert_eq!(map.project_span(&span), Some(span));
        assert_eq!(map.span_to_original(&span), span);
    }
}
