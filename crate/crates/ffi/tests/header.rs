use std::path::Path;
use std::process::Command;

const PROGRAM: &str = r#"
#include "apeqe.h"

int main(void) {
    char *tags = NULL;
    ApeqeStatus s = apeqe_qe_tags("a b c", "a c", false, false, &tags);
    if (s != APEQE_STATUS_OK) {
        return (int)s;
    }
    apeqe_string_free(tags);
    ApeqeModel *model = NULL;
    s = apeqe_model_load("missing.ckpt", &model);
    return s == APEQE_STATUS_IO && apeqe_last_error()[0] != '\0' ? 0 : 1;
}
"#;

fn compile(compiler: &str, lang: &str) {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("apeqe.h").is_file(), "header was not generated");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = match Command::new(compiler)
        .args(["-x", lang, "-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
    {
        Ok(o) => o,
        Err(e) => {
            eprintln!("skipping: {compiler} unavailable ({e})");
            return;
        }
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn header_compiles_as_c() {
    compile("cc", "c");
}

#[test]
fn header_compiles_as_cpp() {
    compile("c++", "c++");
}
