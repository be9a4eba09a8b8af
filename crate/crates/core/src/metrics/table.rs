use super::RegenReport;

/// One model's results for the ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub params: usize,
    pub damage: RegenReport,
    pub mutation: Option<RegenReport>,
}

/// A rendered table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_tsv(&self) -> String {
        let mut s = self.header.join("\t");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join("\t"));
            s.push('\n');
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("| {} |\n", self.header.join(" | "));
        s.push_str(&format!("|{}\n", "---|".repeat(self.header.len())));
        for r in &self.rows {
            s.push_str(&format!("| {} |\n", r.join(" | ")));
        }
        s
    }
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn recovery(r: &RegenReport) -> String {
    r.recovery_percent.map_or_else(|| "no-op".to_string(), |v| format!("{v:.2}"))
}

/// Stage metrics and recovery for damage and mutation, plus parameter count.
pub fn ablation_table(rows: &[AblationRow]) -> Table {
    let stage_names: Vec<String> = rows
        .first()
        .map(|r| r.damage.stages.iter().map(|s| s.name.clone()).collect())
        .unwrap_or_else(|| vec!["stage 1".into(), "stage 2".into(), "stage 3".into()]);
    let mut header = vec!["model".to_string()];
    for kind in ["damage", "mutation"] {
        header.extend(stage_names.iter().map(|n| format!("{kind} {n}")));
        header.push(format!("{kind} recovery %"));
    }
    header.push("params".into());
    let rows = rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.name.clone()];
            cells.extend(r.damage.stages.iter().map(|s| num(s.value)));
            cells.push(recovery(&r.damage));
            match &r.mutation {
                Some(m) => {
                    cells.extend(m.stages.iter().map(|s| num(s.value)));
                    cells.push(recovery(m));
                }
                None => cells.extend(std::iter::repeat_n("n/a".to_string(), stage_names.len() + 1)),
            }
            cells.push(r.params.to_string());
            cells
        })
        .collect();
    Table { header, rows }
}
