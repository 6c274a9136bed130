//! Seeded synthetic voters. No real voter data is used anywhere in this
//! crate; tests, examples and the benchmark draw from here.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::registry::{Column, ColumnSchema};

const FIRST: &[&str] = &[
    "JAMES", "MARY", "ROBERT", "PATRICIA", "JOHN", "JENNIFER", "MICHAEL", "LINDA", "DAVID", "ELIZABETH", "WILLIAM",
    "BARBARA", "RICHARD", "SUSAN", "JOSEPH", "JESSICA", "THOMAS", "SARAH", "CHARLES", "KAREN", "CHRISTOPHER", "LISA",
    "DANIEL", "NANCY", "MATTHEW", "BETTY", "ANTHONY", "MARGARET", "MARK", "SANDRA", "DONALD", "ASHLEY", "STEVEN",
    "KIMBERLY", "PAUL", "EMILY", "ANDREW", "DONNA", "JOSHUA", "MICHELLE", "KENNETH", "CAROL", "KEVIN", "AMANDA",
    "BRIAN", "DOROTHY", "GEORGE", "MELISSA", "TIMOTHY", "DEBORAH", "RONALD", "STEPHANIE", "EDWARD", "REBECCA",
    "JASON", "SHARON", "JEFFREY", "LAURA", "RYAN", "CYNTHIA", "JACOB", "KATHLEEN", "GARY", "AMY", "NICHOLAS",
    "ANGELA", "ERIC", "SHIRLEY", "JONATHAN", "ANNA", "STEPHEN", "BRENDA", "LARRY", "PAMELA", "JUSTIN", "EMMA",
    "SCOTT", "NICOLE", "BRANDON", "HELEN", "BENJAMIN", "SAMANTHA", "SAMUEL", "KATHERINE", "GREGORY", "CHRISTINE",
];

const LAST: &[&str] = &[
    "SMITH", "JOHNSON", "WILLIAMS", "BROWN", "JONES", "GARCIA", "MILLER", "DAVIS", "RODRIGUEZ", "MARTINEZ",
    "HERNANDEZ", "LOPEZ", "GONZALEZ", "WILSON", "ANDERSON", "THOMAS", "TAYLOR", "MOORE", "JACKSON", "MARTIN", "LEE",
    "PEREZ", "THOMPSON", "WHITE", "HARRIS", "SANCHEZ", "CLARK", "RAMIREZ", "LEWIS", "ROBINSON", "WALKER", "YOUNG",
    "ALLEN", "KING", "WRIGHT", "SCOTT", "TORRES", "NGUYEN", "HILL", "FLORES", "GREEN", "ADAMS", "NELSON", "BAKER",
    "HALL", "RIVERA", "CAMPBELL", "MITCHELL", "CARTER", "ROBERTS", "GOMEZ", "PHILLIPS", "EVANS", "TURNER", "DIAZ",
    "PARKER", "CRUZ", "EDWARDS", "COLLINS", "REYES", "STEWART", "MORRIS", "MORALES", "MURPHY", "COOK", "ROGERS",
    "GUTIERREZ", "ORTIZ", "MORGAN", "COOPER", "PETERSON", "BAILEY", "REED", "KELLY", "HOWARD", "RAMOS", "KIM",
    "COX", "WARD", "RICHARDSON", "WATSON", "BROOKS", "CHAVEZ", "WOOD", "JAMES", "BENNETT", "GRAY", "MENDOZA",
];

const STREETS: &[&str] = &[
    "MAIN", "OAK", "PINE", "MAPLE", "CEDAR", "ELM", "WASHINGTON", "LAKE", "HILL", "PARK", "WALNUT", "SPRING",
    "NORTH", "RIDGE", "CHURCH", "WILLOW", "MILL", "SUNSET", "RAILROAD", "JACKSON", "CHERRY", "HIGHLAND", "MADISON",
    "FRANKLIN", "LINCOLN", "MEADOW", "VALLEY", "FOREST", "RIVER", "DOGWOOD", "HICKORY", "LOCUST", "CHESTNUT",
];

const SUFFIXES: &[&str] = &["ST", "AVE", "RD", "LN", "DR", "CT", "WAY", "BLVD"];
const CITIES: &[&str] = &[
    "SPRINGFIELD", "FRANKLIN", "GREENVILLE", "BRISTOL", "CLINTON", "FAIRVIEW", "SALEM", "MADISON", "GEORGETOWN",
    "ARLINGTON", "ASHLAND", "DOVER", "OXFORD", "JACKSON", "BURLINGTON", "MANCHESTER", "MILTON", "NEWPORT",
];
const PARTIES: &[&str] = &["DEM", "REP", "LIB", "GRN", "UNA"];

/// One synthetic voter: the identifier the base system would hand over,
/// plus a row in schema column order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticVoter {
    pub base_id: String,
    pub data: Vec<String>,
}

/// Schema with roughly 1 KB of padded field data per record, for the
/// benchmark. The default schema plus a large sealed notes column.
pub fn kilobyte_schema() -> ColumnSchema {
    ColumnSchema::new(vec![
        Column::new("name", 64, false),
        Column::new("dob", 10, false),
        Column::new("address", 96, false),
        Column::new("notes", 826, false),
        Column::new("party", 16, true),
        Column::new("status", 12, true),
    ])
    .expect("static schema is valid")
}

#[derive(Debug, Clone)]
pub struct VoterGenerator {
    rng: ChaCha20Rng,
    next: u64,
    notes_len: Option<usize>,
}

impl VoterGenerator {
    /// Rows for [`ColumnSchema::default_schema`].
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha20Rng::seed_from_u64(seed), next: 0, notes_len: None }
    }

    /// Rows for [`kilobyte_schema`], with the notes column filled.
    pub fn kilobyte(seed: u64) -> Self {
        Self { rng: ChaCha20Rng::seed_from_u64(seed), next: 0, notes_len: Some(800) }
    }

    pub fn name(&mut self) -> String {
        let r = &mut self.rng;
        let mid = (b'A' + r.gen_range(0..26)) as char;
        format!("{} {} {}", FIRST.choose(r).unwrap(), mid, LAST.choose(r).unwrap())
    }

    pub fn dob(&mut self) -> String {
        let r = &mut self.rng;
        format!("{:04}-{:02}-{:02}", r.gen_range(1930..2006), r.gen_range(1..13), r.gen_range(1..29))
    }

    pub fn address(&mut self) -> String {
        let r = &mut self.rng;
        format!(
            "{} {} {} {} {:05}",
            r.gen_range(1..10000),
            STREETS.choose(r).unwrap(),
            SUFFIXES.choose(r).unwrap(),
            CITIES.choose(r).unwrap(),
            r.gen_range(10000..99999)
        )
    }

    /// A fresh row for an existing voter: new address, same identity.
    pub fn relocate(&mut self, data: &[String]) -> Vec<String> {
        let mut out = data.to_vec();
        out[2] = self.address();
        out
    }

    pub fn voter(&mut self) -> SyntheticVoter {
        let base_id = format!("SYN-{:08}", self.next);
        self.next += 1;
        let mut data = vec![self.name(), self.dob(), self.address()];
        if let Some(n) = self.notes_len {
            let notes: String = (0..n).map(|_| self.rng.gen_range(b'a'..=b'z') as char).collect();
            data.push(notes);
        }
        data.push(PARTIES.choose(&mut self.rng).unwrap().to_string());
        data.push("ACTIVE".into());
        SyntheticVoter { base_id, data }
    }

    pub fn voters(&mut self, n: usize) -> Vec<SyntheticVoter> {
        (0..n).map(|_| self.voter()).collect()
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }
}

/// Applies one random edit (substitute, delete, insert or swap adjacent)
/// to an alphanumeric position of `s`.
pub fn typo<R: Rng>(s: &str, rng: &mut R) -> String {
    let mut chars: Vec<char> = s.chars().collect();
    let spots: Vec<usize> = (0..chars.len()).filter(|&i| chars[i].is_ascii_alphanumeric()).collect();
    let Some(&i) = spots.choose(rng) else {
        return s.to_owned();
    };
    let replacement = |rng: &mut R, c: char| {
        if c.is_ascii_digit() {
            (b'0' + rng.gen_range(0..10)) as char
        } else {
            (b'A' + rng.gen_range(0..26)) as char
        }
    };
    match rng.gen_range(0..4) {
        0 => {
            let mut c = chars[i];
            while c == chars[i] {
                c = replacement(rng, chars[i]);
            }
            chars[i] = c;
        }
        1 if chars.len() > 1 => {
            chars.remove(i);
        }
        2 => {
            let c = replacement(rng, chars[i]);
            chars.insert(i, c);
        }
        _ if i + 1 < chars.len() && chars[i] != chars[i + 1] => chars.swap(i, i + 1),
        _ => {
            let c = replacement(rng, chars[i]);
            chars.insert(i + 1, c);
        }
    }
    chars.into_iter().collect()
}

/// Two jurisdictions' rolls with planted cross-registrations.
#[derive(Debug, Clone)]
pub struct LinkageBenchmark {
    pub a: Vec<SyntheticVoter>,
    pub b: Vec<SyntheticVoter>,
    /// `(index in a, index in b)` for every planted duplicate.
    pub truth: Vec<(usize, usize)>,
}

/// `dupes` voters of `a` reappear in `b` with at most one typo in each of
/// name, dob and address. Typos never overflow a column. Positions in `b`
/// are shuffled.
pub fn linkage_benchmark(seed: u64, n_a: usize, n_b: usize, dupes: usize) -> LinkageBenchmark {
    assert!(dupes <= n_a && dupes <= n_b);
    let mut gen = VoterGenerator::new(seed);
    let pad: Vec<usize> = ColumnSchema::default_schema().columns().iter().map(|c| c.pad_len).collect();
    let a = gen.voters(n_a);
    let mut b = gen.voters(n_b - dupes);
    let mut picked: Vec<usize> = (0..n_a).collect();
    picked.shuffle(gen.rng());
    picked.truncate(dupes);
    let mut tagged: Vec<(SyntheticVoter, Option<usize>)> = b.drain(..).map(|v| (v, None)).collect();
    for &ia in &picked {
        let mut v = a[ia].clone();
        v.base_id = format!("{}-B", v.base_id);
        for (field, &limit) in v.data.iter_mut().zip(&pad).take(3) {
            if gen.rng().gen_bool(0.8) {
                *field = loop {
                    let t = typo(field, gen.rng());
                    if t.len() <= limit {
                        break t;
                    }
                };
            }
        }
        tagged.push((v, Some(ia)));
    }
    tagged.shuffle(gen.rng());
    let truth = tagged.iter().enumerate().filter_map(|(ib, (_, ia))| ia.map(|ia| (ia, ib))).collect();
    LinkageBenchmark { a, b: tagged.into_iter().map(|(v, _)| v).collect(), truth }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(VoterGenerator::new(5).voters(20), VoterGenerator::new(5).voters(20));
        assert_ne!(VoterGenerator::new(5).voters(20), VoterGenerator::new(6).voters(20));
    }

    #[test]
    fn rows_fit_their_schemas() {
        let schema = ColumnSchema::default_schema();
        for v in VoterGenerator::new(1).voters(200) {
            assert_eq!(v.data.len(), schema.len());
            for (value, col) in v.data.iter().zip(schema.columns()) {
                assert!(value.len() <= col.pad_len, "{value} in {}", col.label);
            }
        }
        let kb = kilobyte_schema();
        let v = VoterGenerator::kilobyte(1).voter();
        assert_eq!(v.data.len(), kb.len());
        assert!(v.data.iter().zip(kb.columns()).all(|(x, c)| x.len() <= c.pad_len));
        assert_eq!(kb.columns().iter().map(|c| c.pad_len).sum::<usize>(), 1024);
    }

    fn edit_distance(a: &str, b: &str) -> usize {
        let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for i in 1..=a.len() {
            let mut cur = vec![i; b.len() + 1];
            for j in 1..=b.len() {
                let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
                cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
                if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                    cur[j] = cur[j].min(prev[j - 1]);
                }
            }
            prev = cur;
        }
        prev[b.len()]
    }

    #[test]
    fn typo_is_one_edit() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut gen = VoterGenerator::new(3);
        for _ in 0..500 {
            let s = gen.address();
            let t = typo(&s, &mut rng);
            assert_eq!(edit_distance(&s, &t), 1, "{s} -> {t}");
        }
    }

    #[test]
    fn benchmark_truth_points_at_corrupted_copies() {
        let bench = linkage_benchmark(9, 300, 200, 40);
        assert_eq!(bench.a.len(), 300);
        assert_eq!(bench.b.len(), 200);
        assert_eq!(bench.truth.len(), 40);
        for &(ia, ib) in &bench.truth {
            assert_eq!(bench.b[ib].base_id, format!("{}-B", bench.a[ia].base_id));
            assert_eq!(bench.a[ia].data[3..], bench.b[ib].data[3..]);
        }
        let schema = ColumnSchema::default_schema();
        for v in &bench.b {
            for (value, col) in v.data.iter().zip(schema.columns()) {
                assert!(value.len() <= col.pad_len, "{value} in {}", col.label);
            }
        }
    }
}
