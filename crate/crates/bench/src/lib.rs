//! Inputs shared by the criterion benches.

const CALLS: [&str; 6] = [
    "Reader r = new FileReader(path);",
    "int n = Integer.parseInt(path);",
    "Thread.sleep(5);",
    "Class<?> c = Class.forName(path);",
    "String head = path.substring(0, 1);",
    "total += path.length();",
];

/// A class with `methods` methods, each holding one fragile call among
/// plain statements.
pub fn synthetic_source(methods: usize) -> String {
    let mut out = String::from("package bench;\n\npublic class Synthetic {\n    private int total;\n");
    for m in 0..methods {
        out.push_str(&format!("\n    public void step{m}(String path) {{\n"));
        out.push_str("        total += 1;\n");
        out.push_str(&format!("        {}\n", CALLS[m % CALLS.len()]));
        out.push_str("        total -= 1;\n    }\n");
    }
    out.push_str("}\n");
    out
}

/// Two code versions differing in about one line in `every`.
pub fn edit_pair(lines: usize, every: usize) -> (String, String) {
    let a: Vec<String> = (0..lines).map(|i| format!("        value{i} = compute({i});")).collect();
    let b: Vec<String> = a
        .iter()
        .enumerate()
        .map(|(i, l)| if every > 0 && i % every == 0 { l.replace("compute", "derive") } else { l.clone() })
        .collect();
    (a.join("\n"), b.join("\n"))
}
