//! Bank of self-contained junk statements over fresh names. `{a}` and `{b}`
//! are fresh variables, `{k}` and `{m}` small positive integers.

pub const JUNK_TEMPLATES: [&[&str]; 25] = [
    &["int {a} = {k};"],
    &["int {a} = {k};", "{a} += {m};"],
    &["int {a} = {k};", "int {b} = {a} * {m};"],
    &["long {a} = {k};", "{a} = {a} << 1;"],
    &["int {a} = {k};", "{a}++;"],
    &["unsigned int {a} = {k};"],
    &["int {a} = {k} + {m};"],
    &["char {a} = 'j';"],
    &["int {a} = {k};", "if ({a} > {m}) {a} = {m};"],
    &["int {a} = {k};", "while ({a} < {m}0) {a} += {k};"],
    &["int {a} = {k};", "int {b} = {a} - {m};"],
    &["double {a} = {k}.5;"],
    &["int {a} = {k} * {m};"],
    &["int {a} = {k};", "{a} = {a} % {m};"],
    &["int {a} = {k};", "{a} ^= {m};"],
    &["short {a} = {k};"],
    &["int {a} = {k};", "{a} = -{a};"],
    &["int {a}[{k}];"],
    &["int {a} = {k};", "int {b} = {a} > {m} ? {a} : {m};"],
    &[
        "int {a} = {k};",
        "for (int {b} = 1; {b} < {m}; {b}++) {a} += {b};",
    ],
    &["int {a} = {k};", "{a} |= {m};"],
    &["long {a} = {k};", "long {b} = {a} + {m};"],
    &["int {a} = {k};", "{a} = {a} / {m};"],
    &["int {a} = {k};", "{a} -= {m};"],
    &["int {a} = ({k} + {m}) * 2;"],
];

/// Statements of template `idx` with the given names and constants.
pub fn instantiate_junk(idx: usize, a: &str, b: &str, k: u32, m: u32) -> Vec<String> {
    JUNK_TEMPLATES[idx % JUNK_TEMPLATES.len()]
        .iter()
        .map(|s| {
            s.replace("{a}", a)
                .replace("{b}", b)
                .replace("{k}", &k.to_string())
                .replace("{m}", &m.to_string())
        })
        .collect()
}
