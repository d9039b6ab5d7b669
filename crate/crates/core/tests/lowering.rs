//! Compiles lowered expressions with the system C compiler and compares
//! them with the interpreter's evaluation. Skips when no compiler exists.

mod common;

use std::env;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::Command;

use common::{any_expr, INPUT_LEN};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;
use regen_core::emit::{lower_expr, runtime_prelude};
use regen_core::expr::Width;

fn compiler() -> Option<PathBuf> {
    let path = env::var_os("PATH")?;
    ["cc", "gcc", "clang"].iter().find_map(|name| {
        env::split_paths(&path)
            .map(|d| d.join(name))
            .find(|p| p.is_file())
    })
}

#[test]
fn compiled_lowering_matches_eval() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler; skipped");
        return;
    };
    let mut runner = TestRunner::deterministic();
    let input: Vec<u8> = (0..INPUT_LEN)
        .map(|i| (i as u8).wrapping_mul(97).wrapping_add(13))
        .collect();
    let exprs: Vec<_> = (0..400)
        .map(|_| any_expr().new_tree(&mut runner).unwrap().current())
        .collect();

    let dir = env::temp_dir().join(format!("lowering-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let (c_path, exe, data) = (
        dir.join("lowering.c"),
        dir.join("lowering"),
        dir.join("input.bin"),
    );
    fs::write(&data, &input).unwrap();

    // Reads go through the same bounds-checked file helpers as emitted parsers.
    let mut src = runtime_prelude();
    let _ = writeln!(
        src,
        "\nint main(int argc, char **argv) {{\n    FILE *fp = fopen(argv[1], \"rb\");\n    \
         int64_t y = 0;\n    if (argc < 2 || !fp) return 2;\n    input_len = {INPUT_LEN};"
    );
    for e in &exprs {
        let c = lower_expr(e, &|p| format!("INT64_C({p})")).unwrap();
        if e.width() == Width::W128 {
            let _ = writeln!(
                src,
                "    {{ u128 r = {c}; printf(\"%016llx%016llx\\n\", (unsigned long long)r.hi, (unsigned long long)r.lo); }}"
            );
        } else {
            let _ = writeln!(
                src,
                "    printf(\"%032llx\\n\", (unsigned long long)({c}));"
            );
        }
    }
    src.push_str("    fclose(fp);\n    return 0;\n}\n");

    fs::write(&c_path, &src).unwrap();
    let build = Command::new(&cc)
        .args(["-std=c99", "-O1", "-w", "-o"])
        .arg(&exe)
        .arg(&c_path)
        .output()
        .unwrap();
    assert!(
        build.status.success(),
        "{}",
        String::from_utf8_lossy(&build.stderr)
    );
    let run = Command::new(&exe).arg(&data).output().unwrap();
    assert!(run.status.success());
    let stdout = String::from_utf8(run.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), exprs.len());
    for (e, line) in exprs.iter().zip(lines) {
        let want = format!("{:032x}", e.eval(&input).unwrap());
        assert_eq!(line, want, "{e}");
    }
    let _ = fs::remove_dir_all(&dir);
}
