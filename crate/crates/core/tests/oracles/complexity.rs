use ptt_core::membank::{complexity_model, ComplexityParams, Method};

/// The storage table as printed: (rpn, point, proposal) cells per method.
pub const TABLE: [(Method, [&str; 3]); 3] = [
    (Method::Mppnet16, ["O(4F)", "O(8kN)", "O(16kO)"]),
    (Method::Msf8, ["O(4F)", "O(8F)", "O(kO)"]),
    (Method::Ptt64, ["O(4F)", "O(kN)", "O(64kO)"]),
];

/// Evaluates a cell such as `O(16kO)`: a leading integer constant times a
/// product of single-letter symbols.
pub fn eval_cell(cell: &str, p: &ComplexityParams) -> u64 {
    let inner = cell
        .strip_prefix("O(")
        .and_then(|s| s.strip_suffix(')'))
        .unwrap();
    let digits: String = inner.chars().take_while(|c| c.is_ascii_digit()).collect();
    let mut v: u64 = if digits.is_empty() {
        1
    } else {
        digits.parse().unwrap()
    };
    for sym in inner[digits.len()..].chars() {
        v *= match sym {
            'F' => p.f,
            'k' => p.k,
            'N' => p.n,
            'O' => p.o,
            other => panic!("unknown symbol {other}"),
        };
    }
    v
}

/// Cells where the model disagrees with the table, as `(method, column)`.
pub fn table_mismatches(p: &ComplexityParams) -> Vec<(Method, usize)> {
    let mut bad = Vec::new();
    for (method, cells) in TABLE {
        let row = complexity_model(method, p);
        for (col, got) in [row.rpn, row.point, row.proposal].into_iter().enumerate() {
            if got != eval_cell(cells[col], p) {
                bad.push((method, col));
            }
        }
    }
    bad
}
