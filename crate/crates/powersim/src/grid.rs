//! Network and machine data for the classical-model simulator.
//!
//! The text format has `[SYSTEM]`, `[BUS]`, `[BRANCH]` and `[GEN]` sections.
//! `SYSTEM` holds `key value` pairs; the others are whitespace tables whose
//! first line names the columns. `#` starts a comment.
//!
//! | section | columns |
//! |---------|---------|
//! | `BUS`   | `id type v_set p_load q_load b_shunt` (type is `SLACK`, `PV` or `PQ`) |
//! | `BRANCH`| `from to r x b` (π model, total charging `b`) |
//! | `GEN`   | `id bus p_gen h d xd_prime mva_base` |
//!
//! Bus and branch quantities are per-unit on the system base. `h` (seconds),
//! `d` (per-unit power per per-unit speed) and `xd_prime` are on the
//! machine's `mva_base`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusType {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusType,
    pub v_set: f64,
    pub p_load: f64,
    pub q_load: f64,
    pub b_shunt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub id: String,
    pub bus: usize,
    /// Scheduled output, system per-unit. Ignored for the slack machine.
    pub p_gen: f64,
    /// Inertia constant on the machine base, seconds.
    pub h: f64,
    /// Damping on the machine base, per-unit power per per-unit speed.
    pub d: f64,
    /// Transient reactance on the machine base.
    pub xd_prime: f64,
    pub mva_base: f64,
}

impl Generator {
    pub fn h_system(&self, base_mva: f64) -> f64 {
        self.h * self.mva_base / base_mva
    }

    pub fn xd_prime_system(&self, base_mva: f64) -> f64 {
        self.xd_prime * base_mva / self.mva_base
    }

    /// Converts a machine-base damping value to the system base.
    pub fn damping_system(&self, d: f64, base_mva: f64) -> f64 {
        d * self.mva_base / base_mva
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    pub base_mva: f64,
    pub frequency_hz: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
}

const KUNDUR_TWO_AREA: &str = include_str!("../data/kundur_two_area.grid");

fn grid_err(line: usize, msg: impl Into<String>) -> SimError {
    SimError::GridFormat {
        line,
        msg: msg.into(),
    }
}

struct Table {
    columns: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn get<'a>(&self, row: &'a (usize, Vec<String>), col: &str) -> Result<&'a str> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == col)
            .ok_or_else(|| grid_err(row.0, format!("missing column {col}")))?;
        Ok(row.1[idx].as_str())
    }

    fn num(&self, row: &(usize, Vec<String>), col: &str) -> Result<f64> {
        let raw = self.get(row, col)?;
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| grid_err(row.0, format!("column {col}: not a number: {raw:?}")))
    }

    fn int(&self, row: &(usize, Vec<String>), col: &str) -> Result<usize> {
        let raw = self.get(row, col)?;
        raw.parse::<usize>()
            .map_err(|_| grid_err(row.0, format!("column {col}: not an integer: {raw:?}")))
    }
}

impl GridModel {
    /// The bundled two-area, four-machine system.
    pub fn kundur_two_area() -> Self {
        Self::parse(KUNDUR_TWO_AREA).expect("bundled grid file is valid")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut system: HashMap<String, (usize, String)> = HashMap::new();
        let mut tables: HashMap<String, Table> = HashMap::new();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_ascii_uppercase();
                if !matches!(name.as_str(), "SYSTEM" | "BUS" | "BRANCH" | "GEN") {
                    return Err(grid_err(line_no, format!("unknown section [{name}]")));
                }
                if tables.contains_key(&name) || (name == "SYSTEM" && !system.is_empty()) {
                    return Err(grid_err(line_no, format!("duplicate section [{name}]")));
                }
                section = Some(name);
                continue;
            }
            let fields: Vec<String> = line.split_whitespace().map(str::to_string).collect();
            match section.as_deref() {
                None => return Err(grid_err(line_no, "content before the first section")),
                Some("SYSTEM") => {
                    if fields.len() != 2 {
                        return Err(grid_err(line_no, "expected `key value`"));
                    }
                    system.insert(fields[0].to_ascii_lowercase(), (line_no, fields[1].clone()));
                }
                Some(name) => match tables.get_mut(name) {
                    None => {
                        tables.insert(
                            name.to_string(),
                            Table {
                                columns: fields.iter().map(|f| f.to_ascii_lowercase()).collect(),
                                rows: Vec::new(),
                            },
                        );
                    }
                    Some(t) => {
                        if fields.len() != t.columns.len() {
                            return Err(grid_err(
                                line_no,
                                format!("{} fields, header has {}", fields.len(), t.columns.len()),
                            ));
                        }
                        t.rows.push((line_no, fields));
                    }
                },
            }
        }

        let sys_num = |key: &str| -> Result<f64> {
            let (line, raw) = system
                .get(key)
                .ok_or_else(|| grid_err(0, format!("[SYSTEM] is missing {key}")))?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| grid_err(*line, format!("{key} must be a positive number")))
        };
        let base_mva = sys_num("base_mva")?;
        let frequency_hz = sys_num("frequency_hz")?;
        let table = |name: &str| {
            tables
                .get(name)
                .ok_or_else(|| grid_err(0, format!("missing section [{name}]")))
        };

        let bus_t = table("BUS")?;
        let mut buses = Vec::new();
        for row in &bus_t.rows {
            let kind = match bus_t.get(row, "type")?.to_ascii_uppercase().as_str() {
                "SLACK" => BusType::Slack,
                "PV" => BusType::Pv,
                "PQ" => BusType::Pq,
                other => return Err(grid_err(row.0, format!("unknown bus type {other}"))),
            };
            buses.push(Bus {
                id: bus_t.int(row, "id")?,
                kind,
                v_set: bus_t.num(row, "v_set")?,
                p_load: bus_t.num(row, "p_load")?,
                q_load: bus_t.num(row, "q_load")?,
                b_shunt: bus_t.num(row, "b_shunt")?,
            });
        }
        let br_t = table("BRANCH")?;
        let mut branches = Vec::new();
        for row in &br_t.rows {
            branches.push(Branch {
                from: br_t.int(row, "from")?,
                to: br_t.int(row, "to")?,
                r: br_t.num(row, "r")?,
                x: br_t.num(row, "x")?,
                b: br_t.num(row, "b")?,
            });
        }
        let gen_t = table("GEN")?;
        let mut generators = Vec::new();
        for row in &gen_t.rows {
            generators.push(Generator {
                id: gen_t.get(row, "id")?.to_string(),
                bus: gen_t.int(row, "bus")?,
                p_gen: gen_t.num(row, "p_gen")?,
                h: gen_t.num(row, "h")?,
                d: gen_t.num(row, "d")?,
                xd_prime: gen_t.num(row, "xd_prime")?,
                mva_base: gen_t.num(row, "mva_base")?,
            });
        }
        let grid = GridModel {
            base_mva,
            frequency_hz,
            buses,
            branches,
            generators,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Checks ids, the single slack bus, impedances and connectivity.
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(SimError::InvalidGrid(m));
        if self.buses.is_empty() {
            return invalid("no buses".into());
        }
        let ids: HashSet<usize> = self.buses.iter().map(|b| b.id).collect();
        if ids.len() != self.buses.len() {
            return invalid("duplicate bus ids".into());
        }
        let slack = self.buses.iter().filter(|b| b.kind == BusType::Slack).count();
        if slack != 1 {
            return invalid(format!("exactly one slack bus required, found {slack}"));
        }
        for b in &self.buses {
            if !(b.v_set > 0.0) {
                return invalid(format!("bus {}: voltage setpoint must be positive", b.id));
            }
        }
        for br in &self.branches {
            if !ids.contains(&br.from) || !ids.contains(&br.to) || br.from == br.to {
                return invalid(format!("branch {}-{} has bad endpoints", br.from, br.to));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return invalid(format!("branch {}-{} has zero impedance", br.from, br.to));
            }
        }
        let gen_ids: HashSet<&str> = self.generators.iter().map(|g| g.id.as_str()).collect();
        if gen_ids.len() != self.generators.len() {
            return invalid("duplicate generator ids".into());
        }
        let mut gen_buses = HashSet::new();
        for g in &self.generators {
            let Some(bus) = self.buses.iter().find(|b| b.id == g.bus) else {
                return invalid(format!("generator {} on unknown bus {}", g.id, g.bus));
            };
            if bus.kind == BusType::Pq {
                return invalid(format!("generator {} sits on PQ bus {}", g.id, g.bus));
            }
            if !gen_buses.insert(g.bus) {
                return invalid(format!("more than one generator on bus {}", g.bus));
            }
            if !(g.h > 0.0 && g.xd_prime > 0.0 && g.mva_base > 0.0 && g.d >= 0.0) {
                return invalid(format!("generator {}: h, xd_prime, mva_base must be positive", g.id));
            }
        }
        for b in self.buses.iter().filter(|b| b.kind != BusType::Pq) {
            if !gen_buses.contains(&b.id) {
                return invalid(format!("{:?} bus {} has no generator", b.kind, b.id));
            }
        }
        // Breadth-first connectivity from the first bus.
        let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
        for br in &self.branches {
            adj.entry(br.from).or_default().push(br.to);
            adj.entry(br.to).or_default().push(br.from);
        }
        let mut seen = HashSet::from([self.buses[0].id]);
        let mut queue = VecDeque::from([self.buses[0].id]);
        while let Some(b) = queue.pop_front() {
            for &n in adj.get(&b).into_iter().flatten() {
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        if seen.len() != self.buses.len() {
            return invalid("network is not connected".into());
        }
        Ok(())
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn generator_bus_indices(&self) -> Vec<usize> {
        self.generators
            .iter()
            .map(|g| self.bus_index(g.bus).expect("validated"))
            .collect()
    }

    /// Scales every load's P and Q; with `scale_generation` the scheduled
    /// output of non-slack machines follows the same factor.
    pub fn with_load_scale(&self, scale: f64, scale_generation: bool) -> Self {
        let mut g = self.clone();
        for b in &mut g.buses {
            b.p_load *= scale;
            b.q_load *= scale;
        }
        if scale_generation {
            for gen in &mut g.generators {
                gen.p_gen *= scale;
            }
        }
        g
    }

    /// Bus admittance matrix including line charging and bus shunts.
    pub fn ybus(&self) -> DMatrix<Complex64> {
        let n = self.buses.len();
        let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for br in &self.branches {
            let (i, j) = (self.bus_index(br.from).unwrap(), self.bus_index(br.to).unwrap());
            let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
            let half = Complex64::new(0.0, br.b / 2.0);
            y[(i, i)] += ys + half;
            y[(j, j)] += ys + half;
            y[(i, j)] -= ys;
            y[(j, i)] -= ys;
        }
        for (i, b) in self.buses.iter().enumerate() {
            y[(i, i)] += Complex64::new(0.0, b.b_shunt);
        }
        y
    }
}
