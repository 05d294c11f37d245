//! Deterministic toy C functions for fuzzing and desk-scale experiments.
//!
//! Background statements are chosen so that none of them matches a shipped
//! injection pattern: no zero/NULL assignments, no calls whose names hit the
//! catalog globs, no early-return checks.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::code::SourceUnit;

const VARS: &[&str] = &[
    "len", "count", "idx", "total", "offset", "size", "flags", "val", "pos", "width", "height",
    "step",
];
const FUNCS: &[&str] = &[
    "compute",
    "update_state",
    "lookup",
    "scale",
    "emit",
    "checksum",
    "advance",
    "notify",
];
const NAMES: &[&str] = &[
    "handle",
    "process",
    "parse_item",
    "load",
    "render",
    "apply",
    "merge",
    "visit",
];

struct Gen {
    rng: ChaCha8Rng,
    vars: Vec<&'static str>,
}

impl Gen {
    fn var(&mut self) -> &'static str {
        self.vars.choose(&mut self.rng).copied().unwrap_or("val")
    }

    fn num(&mut self) -> u32 {
        self.rng.random_range(1..64)
    }

    fn operand(&mut self) -> String {
        if self.rng.random_bool(0.6) {
            self.var().to_string()
        } else {
            self.num().to_string()
        }
    }

    fn simple(&mut self) -> String {
        match self.rng.random_range(0..6) {
            0 => format!("{} = {} + {};", self.var(), self.var(), self.num()),
            1 => format!("{} = {} * {};", self.var(), self.operand(), self.var()),
            2 => format!("{} += {};", self.var(), self.operand()),
            3 => {
                let f = *FUNCS.choose(&mut self.rng).unwrap();
                format!("{f}({}, {});", self.var(), self.operand())
            }
            4 => {
                let f = *FUNCS.choose(&mut self.rng).unwrap();
                format!("{} = {f}({});", self.var(), self.var())
            }
            _ => format!("{} = {} - {};", self.var(), self.var(), self.num()),
        }
    }

    fn statement(&mut self, depth: usize, indent: &str) -> String {
        let inner = format!("{indent}    ");
        let roll = if depth >= 2 {
            0
        } else {
            self.rng.random_range(0..10)
        };
        match roll {
            7 => {
                let (a, b) = (self.var(), self.var());
                let body = self.statement(depth + 1, &inner);
                if self.rng.random_bool(0.5) {
                    let alt = self.statement(depth + 1, &inner);
                    format!(
                        "{indent}if ({a} > {b}) {{\n{body}\n{indent}}} else {{\n{alt}\n{indent}}}"
                    )
                } else {
                    format!("{indent}if ({a} < {b}) {{\n{body}\n{indent}}}")
                }
            }
            8 => {
                let v = self.var();
                let body = self.statement(depth + 1, &inner);
                format!("{indent}for (i = 0; i < {v}; i++) {{\n{body}\n{indent}}}")
            }
            9 => {
                let v = self.var();
                let n = self.num() + 64;
                format!("{indent}while ({v} < {n}) {{\n{inner}{v} = {v} + 2;\n{indent}}}")
            }
            _ => format!("{indent}{}", self.simple()),
        }
    }
}

fn gen(seed: u64) -> Gen {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(3..6);
    let mut vars: Vec<&'static str> = VARS.choose_multiple(&mut rng, k).copied().collect();
    vars.sort_unstable();
    Gen { rng, vars }
}

fn header(g: &mut Gen) -> (String, Vec<String>) {
    let name = *NAMES.choose(&mut g.rng).unwrap();
    let suffix = g.rng.random_range(0..100);
    let params = &g.vars[..2];
    let head = format!(
        "int {name}_{suffix}(int {}, int {}) {{",
        params[0], params[1]
    );
    let mut decls = vec!["    int i = 1;".to_string()];
    for v in &g.vars[2..] {
        decls.push(format!("    int {v} = {};", g.rng.random_range(1..9)));
    }
    (head, decls)
}

/// A random well-formed function built from background statements only.
pub fn random_function(seed: u64) -> String {
    let mut g = gen(seed);
    let (head, mut lines) = header(&mut g);
    let n = g.rng.random_range(3..8);
    for _ in 0..n {
        lines.push(g.statement(0, "    "));
    }
    let ret = g.var();
    format!("{head}\n{}\n    return {ret};\n}}\n", lines.join("\n"))
}

pub fn toy_corpus(n: usize, seed: u64) -> Vec<SourceUnit> {
    (0..n)
        .map(|i| SourceUnit {
            project_id: "toy".into(),
            path: format!("toy/f{i:04}.c"),
            function_name: format!("f{i}"),
            text: random_function(seed.wrapping_mul(0x9E37_79B9).wrapping_add(i as u64)),
        })
        .collect()
}

/// A toy function with one planted injection context.
#[derive(Debug, Clone)]
pub struct Planted {
    pub unit: SourceUnit,
    /// The expected vulnerable text after injecting at the planted site.
    pub vulnerable: String,
    /// Exact source text of the planted statement.
    pub site_text: String,
    /// 1-based first line of the planted statement in `unit.text`.
    pub site_line: usize,
    pub vuln_type: String,
}

/// Planted statement families: (statement, its vulnerable replacement or
/// empty for deletion, label).
fn planted_site(g: &mut Gen) -> (String, String, &'static str) {
    let v = g.var();
    match g.rng.random_range(0..5) {
        0 => (
            format!("if ({v} > {}) return -1;", g.num() + 100),
            String::new(),
            "CWE-119",
        ),
        1 => (
            format!("if (!{v}) return -EINVAL;"),
            String::new(),
            "CWE-476",
        ),
        2 => (format!("release_free({v});"), String::new(), "CWE-401"),
        3 => (
            format!("pthread_mutex_unlock({v});"),
            String::new(),
            "CWE-362",
        ),
        _ => {
            let n = g.num();
            (
                format!("static int tmp_{v} = {n};"),
                format!("int tmp_{v} = {n};"),
                "Type Error",
            )
        }
    }
}

/// Toy functions each containing exactly one planted context at a random
/// position among background statements.
pub fn planted_corpus(n: usize, seed: u64) -> Vec<Planted> {
    (0..n)
        .map(|i| {
            let mut g = gen(seed.wrapping_mul(0x51_7CC1_B727).wrapping_add(i as u64));
            let (head, mut lines) = header(&mut g);
            for _ in 0..g.rng.random_range(2..6) {
                let s = g.simple();
                lines.push(format!("    {s}"));
            }
            let (site, replacement, vuln_type) = planted_site(&mut g);
            let insert_at = g.rng.random_range(1..=lines.len());
            lines.insert(insert_at, format!("    {site}"));
            let ret = g.var();
            let body =
                |ls: &[String]| format!("{head}\n{}\n    return {ret};\n}}\n", ls.join("\n"));
            let text = body(&lines);
            let mut vuln_lines = lines.clone();
            if replacement.is_empty() {
                vuln_lines.remove(insert_at);
            } else {
                vuln_lines[insert_at] = format!("    {replacement}");
            }
            Planted {
                unit: SourceUnit {
                    project_id: "planted".into(),
                    path: format!("planted/p{i:04}.c"),
                    function_name: format!("p{i}"),
                    text,
                },
                vulnerable: body(&vuln_lines),
                site_text: site,
                site_line: insert_at + 2,
                vuln_type: vuln_type.to_string(),
            }
        })
        .collect()
}
