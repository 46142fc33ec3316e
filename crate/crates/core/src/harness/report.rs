//! Table rendering. Everything here is a pure function of the records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::GeneratorRef;
use crate::conflict::{ConflictMode, ConflictReport};
use crate::lookahead::{ScenarioKind, ScenarioResult};
use crate::regime::RegimeName;

pub const SEP: &str = " | ";
pub const MISSING: &str = "-";

/// One scenario result of one trained classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub classifier: RegimeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorRef>,
    #[serde(flatten)]
    pub result: ScenarioResult,
}

fn floor_div(a: i128, b: i128) -> i128 {
    a.div_euclid(b)
}

/// `num/den` as a percentage in tenths, rounded half up (exact integers).
fn tenths(num: i128, den: i128) -> i128 {
    floor_div(2000 * num + den, 2 * den)
}

fn render_tenths(v: i128, signed: bool) -> String {
    let body = format!("{}.{}", v.abs() / 10, v.abs() % 10);
    match (signed, v.signum()) {
        (_, -1) => format!("-{body}"),
        (true, 1) => format!("+{body}"),
        _ => body,
    }
}

/// `t/d` as a one-decimal percentage: (230, 233) → "98.7".
pub fn format_accuracy(t: usize, d: usize) -> String {
    if d == 0 {
        return MISSING.to_string();
    }
    render_tenths(tenths(t as i128, d as i128), false)
}

/// `t/d − bt/bd` in signed percentage points: "+1.8", "0.0", "-2.7".
pub fn format_delta(t: usize, d: usize, bt: usize, bd: usize) -> String {
    if d == 0 || bd == 0 {
        return MISSING.to_string();
    }
    let (t, d, bt, bd) = (t as i128, d as i128, bt as i128, bd as i128);
    render_tenths(tenths(t * bd - bt * d, d * bd), true)
}

fn cell(result: Option<&ScenarioResult>, relative: bool) -> String {
    match result {
        None => MISSING.to_string(),
        Some(r) if relative => match r.baseline {
            Some([bt, bd]) => format_delta(r.t, r.d, bt, bd),
            None => MISSING.to_string(),
        },
        Some(r) => format_accuracy(r.t, r.d),
    }
}

type Key = (RegimeName, ScenarioKind, Option<GeneratorRef>);

fn index(records: &[EvalRecord]) -> BTreeMap<Key, &ScenarioResult> {
    records
        .iter()
        .map(|r| ((r.classifier, r.result.scenario, r.generator), &r.result))
        .collect()
}

fn has_rows(records: &[EvalRecord], rows: &[RegimeName]) -> Vec<RegimeName> {
    rows.iter()
        .copied()
        .filter(|row| records.iter().any(|r| r.classifier == *row))
        .collect()
}

fn line(cells: Vec<String>) -> String {
    cells.join(SEP)
}

fn generator_key(scenario: ScenarioKind, g: GeneratorRef) -> Option<GeneratorRef> {
    scenario.needs_generator().then_some(g)
}

/// Rows × {1-u, 2-u, 3-u, 3-5xg}; the 3-5xg cell uses `generator`.
pub fn render_main_table(
    title: &str,
    records: &[EvalRecord],
    rows: &[RegimeName],
    generator: GeneratorRef,
    relative: bool,
) -> String {
    let cols = [ScenarioKind::U1, ScenarioKind::U2, ScenarioKind::U3, ScenarioKind::Gen5x];
    render_grid(title, records, rows, &cols, generator, relative)
}

/// Rows × {1-u, 2-u, 3-u}, for comparing training regimes.
pub fn render_regime_table(title: &str, records: &[EvalRecord], rows: &[RegimeName], relative: bool) -> String {
    let cols = [ScenarioKind::U1, ScenarioKind::U2, ScenarioKind::U3];
    render_grid(title, records, rows, &cols, GeneratorRef::SelfModel, relative)
}

fn render_grid(
    title: &str,
    records: &[EvalRecord],
    rows: &[RegimeName],
    cols: &[ScenarioKind],
    generator: GeneratorRef,
    relative: bool,
) -> String {
    let idx = index(records);
    let mut out = vec![line(
        std::iter::once(title.to_string())
            .chain(cols.iter().map(|c| c.label().to_string()))
            .collect(),
    )];
    for row in has_rows(records, rows) {
        let mut cells = vec![row.to_string()];
        for &c in cols {
            cells.push(cell(idx.get(&(row, c, generator_key(c, generator))).copied(), relative));
        }
        out.push(line(cells));
    }
    out.join("\n") + "\n"
}

/// Rows × {3-gen, 3-5xg} per generator, then 3-rnd from `rnd_generator`.
/// Cells within a row are separated by " / ".
pub fn render_lookahead_table(
    title: &str,
    records: &[EvalRecord],
    rows: &[RegimeName],
    generators: &[GeneratorRef],
    rnd_generator: GeneratorRef,
    relative: bool,
) -> String {
    let idx = index(records);
    let mut columns: Vec<(ScenarioKind, GeneratorRef)> = Vec::new();
    for scenario in [ScenarioKind::Gen3, ScenarioKind::Gen5x] {
        columns.extend(generators.iter().map(|&g| (scenario, g)));
    }
    columns.push((ScenarioKind::Rnd3, rnd_generator));
    let heading = columns
        .iter()
        .map(|(s, g)| {
            if *s == ScenarioKind::Rnd3 || generators.len() == 1 {
                s.label().to_string()
            } else {
                format!("{} {}", s.label(), g.column())
            }
        })
        .collect::<Vec<_>>()
        .join(" / ");
    let mut out = vec![format!("{title}{SEP}{heading}")];
    for row in has_rows(records, rows) {
        let cells = columns
            .iter()
            .map(|&(s, g)| cell(idx.get(&(row, s, Some(g))).copied(), relative))
            .collect::<Vec<_>>()
            .join(" / ");
        out.push(format!("{row}{SEP}{cells}"));
    }
    out.join("\n") + "\n"
}

fn mode_title(mode: ConflictMode) -> &'static str {
    match mode {
        ConflictMode::ConflictOracle => "Conflict-oracle",
        ConflictMode::MistakeOracle => "Mistake-oracle",
        ConflictMode::Threshold => "Threshold-based conflicts",
    }
}

/// Whole-percent error reduction, rounded half up: (100, 69) → "31%".
pub fn format_reduction(before: usize, after: usize) -> String {
    if before == 0 {
        return MISSING.to_string();
    }
    let (b, a) = (before as i128, after as i128);
    format!("{}%", floor_div(200 * (b - a) + b, 2 * b))
}

pub fn render_conflict_table(reports: &[ConflictReport]) -> String {
    let mut out = vec![line(
        ["method", "error reduction", "conflicts", "mistakes before", "mistakes after"]
            .map(String::from)
            .to_vec(),
    )];
    for r in reports {
        out.push(line(vec![
            mode_title(r.mode).to_string(),
            format_reduction(r.mistakes_before, r.mistakes_after),
            r.conflicts_found.to_string(),
            r.mistakes_before.to_string(),
            r.mistakes_after.to_string(),
        ]));
    }
    out.join("\n") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(classifier: RegimeName, scenario: ScenarioKind, generator: Option<GeneratorRef>, t: usize, d: usize) -> EvalRecord {
        EvalRecord {
            classifier,
            generator,
            result: ScenarioResult::new(scenario, t, d),
        }
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(format_accuracy(230, 233), "98.7");
        assert_eq!(format_accuracy(1, 8), "12.5");
        assert_eq!(format_accuracy(1, 16), "6.3");
        assert_eq!(format_accuracy(0, 5), "0.0");
        assert_eq!(format_accuracy(5, 5), "100.0");
        assert_eq!(format_delta(1, 10, 1, 10), "0.0");
        assert_eq!(format_delta(12, 100, 10, 100), "+2.0");
        assert_eq!(format_delta(7, 100, 10, 100), "-3.0");
        assert_eq!(format_reduction(100, 69), "31%");
    }

    #[test]
    fn suc_row_has_dashes_and_empty_grid_is_header_only() {
        let records = vec![rec(RegimeName::Suc, ScenarioKind::U1, None, 905, 1000)];
        let t = render_main_table("MultiWOZ", &records, &[RegimeName::Suc, RegimeName::Sdc], GeneratorRef::SelfModel, false);
        assert_eq!(t, "MultiWOZ | 1-u | 2-u | 3-u | 3-5xg\nSUC | 90.5 | - | - | -\n");
        let empty = render_main_table("MultiWOZ", &[], &[RegimeName::Suc], GeneratorRef::SelfModel, false);
        assert_eq!(empty.lines().count(), 1);
    }

    #[test]
    fn lookahead_row_layout() {
        let part = GeneratorRef::Regime(RegimeName::PartSdc);
        let all = GeneratorRef::Regime(RegimeName::All);
        let records = vec![
            rec(RegimeName::All, ScenarioKind::Gen3, Some(part), 759, 1000),
            rec(RegimeName::All, ScenarioKind::Gen3, Some(all), 753, 1000),
            rec(RegimeName::All, ScenarioKind::Gen5x, Some(part), 767, 1000),
            rec(RegimeName::All, ScenarioKind::Gen5x, Some(all), 772, 1000),
            rec(RegimeName::All, ScenarioKind::Rnd3, Some(all), 658, 1000),
        ];
        let t = render_lookahead_table("SGD", &records, &[RegimeName::All], &[part, all], all, false);
        assert_eq!(t.lines().nth(1).unwrap(), "ALL | 75.9 / 75.3 / 76.7 / 77.2 / 65.8");
    }
}
