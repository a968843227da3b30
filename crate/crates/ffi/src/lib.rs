//! C ABI for the query engine: opaque handles, integer status codes, and
//! CSV/JSON strings. Every entry point catches panics; no Rust unwinding
//! crosses the boundary. Strings returned through out-parameters are owned by
//! the caller and must be released with `sq_string_free`.

use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use libc::{c_char, c_int};
use num::BigUint;

use starq_core::cli::Workspace;
use starq_core::planner::{Certificate, EngineAny, Verdict};
use starq_core::vdb;

/// Success.
pub const SQ_OK: c_int = 0;
/// I/O, parse, or manifest failure; details via `sq_last_error`.
pub const SQ_ERR_LOAD: c_int = 1;
/// The query classified as intractable.
pub const SQ_INTRACTABLE: c_int = 2;
/// No known pipeline applies (unknown classification).
pub const SQ_UNKNOWN: c_int = 3;
/// Null pointer or otherwise invalid argument.
pub const SQ_ERR_ARGUMENT: c_int = 4;
/// The requested index lies past the last answer.
pub const SQ_PAST_END: c_int = 5;
/// Engine construction failed (for example, answer-count overflow).
pub const SQ_ERR_BUILD: c_int = 6;
/// Internal panic; a bug.
pub const SQ_ERR_INTERNAL: c_int = 7;

struct WorkspaceInner {
    ws: Workspace,
    cert: Certificate,
}

struct EngineInner {
    engine: EngineAny,
    ws_digest: [u8; 32],
}

/// Opaque workspace handle.
#[repr(C)]
pub struct SqWorkspace {
    _private: [u8; 0],
}

/// Opaque engine handle.
#[repr(C)]
pub struct SqEngine {
    _private: [u8; 0],
}

thread_local! {
    static LAST_ERROR: std::cell::RefCell<CString> =
        std::cell::RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let clean: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap());
}

fn to_out_string(s: String, out: *mut *mut c_char) -> c_int {
    let clean: String = s.chars().filter(|&c| c != '\0').collect();
    let c = CString::new(clean).unwrap();
    unsafe { *out = c.into_raw() };
    SQ_OK
}

fn guard<F: FnOnce() -> c_int>(f: F) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            SQ_ERR_INTERNAL
        }
    }
}

/// Message of the most recent failure on this thread. The pointer stays valid
/// until the next failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn sq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opens a workspace manifest and classifies its query. On success stores a
/// handle in `out` and returns SQ_OK; classification is available via
/// `sq_workspace_classify_json`.
#[no_mangle]
pub unsafe extern "C" fn sq_workspace_open(
    manifest_path: *const c_char,
    out: *mut *mut SqWorkspace,
) -> c_int {
    guard(|| {
        if manifest_path.is_null() || out.is_null() {
            set_error("null argument");
            return SQ_ERR_ARGUMENT;
        }
        let path = match unsafe { CStr::from_ptr(manifest_path) }.to_str() {
            Ok(p) => p,
            Err(_) => {
                set_error("manifest path is not valid UTF-8");
                return SQ_ERR_ARGUMENT;
            }
        };
        match Workspace::load(Path::new(path), &[]) {
            Ok(ws) => {
                let cert = ws.job().classify();
                let inner = Box::new(WorkspaceInner { ws, cert });
                unsafe { *out = Box::into_raw(inner) as *mut SqWorkspace };
                SQ_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                SQ_ERR_LOAD
            }
        }
    })
}

/// Releases a workspace handle.
#[no_mangle]
pub unsafe extern "C" fn sq_workspace_free(ws: *mut SqWorkspace) {
    if !ws.is_null() {
        drop(unsafe { Box::from_raw(ws as *mut WorkspaceInner) });
    }
}

/// Writes the certificate JSON to `out`. Returns SQ_OK, SQ_INTRACTABLE, or
/// SQ_UNKNOWN according to the verdict (the JSON is produced in every case).
#[no_mangle]
pub unsafe extern "C" fn sq_workspace_classify_json(
    ws: *const SqWorkspace,
    out: *mut *mut c_char,
) -> c_int {
    guard(|| {
        if ws.is_null() || out.is_null() {
            set_error("null argument");
            return SQ_ERR_ARGUMENT;
        }
        let inner = unsafe { &*(ws as *const WorkspaceInner) };
        let json = inner.cert.to_json().to_string();
        let code = match inner.cert.verdict {
            Verdict::Tractable(_) => SQ_OK,
            Verdict::Intractable { .. } => SQ_INTRACTABLE,
            Verdict::Unknown { .. } => SQ_UNKNOWN,
        };
        let rc = to_out_string(json, out);
        if rc != SQ_OK {
            return rc;
        }
        code
    })
}

/// Builds the direct-access engine for a tractable workspace. `bigint`
/// non-zero selects arbitrary-precision answer counts.
#[no_mangle]
pub unsafe extern "C" fn sq_workspace_build(
    ws: *const SqWorkspace,
    bigint: c_int,
    out: *mut *mut SqEngine,
) -> c_int {
    guard(|| {
        if ws.is_null() || out.is_null() {
            set_error("null argument");
            return SQ_ERR_ARGUMENT;
        }
        let inner = unsafe { &*(ws as *const WorkspaceInner) };
        match inner.cert.verdict {
            Verdict::Intractable { .. } => {
                set_error("query is intractable");
                return SQ_INTRACTABLE;
            }
            Verdict::Unknown { .. } => {
                set_error("query is not classified tractable");
                return SQ_UNKNOWN;
            }
            Verdict::Tractable(_) => {}
        }
        match EngineAny::build(&inner.ws.job(), &inner.cert, bigint != 0) {
            Ok(engine) => {
                let e = Box::new(EngineInner { engine, ws_digest: inner.ws.digest });
                unsafe { *out = Box::into_raw(e) as *mut SqEngine };
                SQ_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                SQ_ERR_BUILD
            }
        }
    })
}

/// Releases an engine handle.
#[no_mangle]
pub unsafe extern "C" fn sq_engine_free(engine: *mut SqEngine) {
    if !engine.is_null() {
        drop(unsafe { Box::from_raw(engine as *mut EngineInner) });
    }
}

/// Writes the answer count as a decimal string (counts can exceed 64 bits in
/// big-integer mode).
#[no_mangle]
pub unsafe extern "C" fn sq_engine_count(
    engine: *const SqEngine,
    out: *mut *mut c_char,
) -> c_int {
    guard(|| {
        if engine.is_null() || out.is_null() {
            set_error("null argument");
            return SQ_ERR_ARGUMENT;
        }
        let inner = unsafe { &*(engine as *const EngineInner) };
        to_out_string(inner.engine.count().to_string(), out)
    })
}

/// Writes the i-th answer (1-based) as a CSV line. Returns SQ_PAST_END when
/// the index exceeds the answer count.
#[no_mangle]
pub unsafe extern "C" fn sq_engine_get_csv(
    engine: *const SqEngine,
    ws: *const SqWorkspace,
    index: u64,
    out: *mut *mut c_char,
) -> c_int {
    guard(|| {
        if engine.is_null() || ws.is_null() || out.is_null() {
            set_error("null argument");
            return SQ_ERR_ARGUMENT;
        }
        if index == 0 {
            set_error("answer indices are 1-based");
            return SQ_ERR_ARGUMENT;
        }
        let e = unsafe { &*(engine as *const EngineInner) };
        let w = unsafe { &*(ws as *const WorkspaceInner) };
        if e.ws_digest != w.ws.digest {
            set_error("engine does not belong to this workspace");
            return SQ_ERR_ARGUMENT;
        }
        match e.engine.get(&BigUint::from(index)) {
            Ok(Some(row)) => {
                to_out_string(vdb::render_row(&row, &w.ws.consts, &w.ws.semiring), out)
            }
            Ok(None) => SQ_PAST_END,
            Err(err) => {
                set_error(&err.to_string());
                SQ_ERR_ARGUMENT
            }
        }
    })
}

/// Releases a string produced by this library.
#[no_mangle]
pub unsafe extern "C" fn sq_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;
    use std::ptr;

    fn write(dir: &Path, name: &str, content: &str) {
        fs::write(dir.join(name), content).unwrap();
    }

    fn workspace_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "teams.csv", "1,5\n2,5\n3,6\n4,7\n5,8\n");
        write(dir.path(), "goals.csv", "1,1,31\n1,3,50\n1,3,75\n2,4,90\n2,4,9\n");
        write(dir.path(), "replays.csv", "1,1\n1,31\n1,50\n2,5\n1,90\n");
        write(dir.path(), "q.txt", "Q(c, Sum(t)) :- Teams(p,c), Goals(g,p,t), Replays(g,t).\n");
        write(
            dir.path(),
            "ws.toml",
            "query = \"q.txt\"\nsemiring = \"counting\"\n\n[[relations]]\nname = \"Teams\"\npath = \"teams.csv\"\narity = 2\n\n[[relations]]\nname = \"Goals\"\npath = \"goals.csv\"\narity = 3\n\n[[relations]]\nname = \"Replays\"\npath = \"replays.csv\"\narity = 2\n",
        );
        dir
    }

    unsafe fn take_string(p: *mut c_char) -> String {
        let s = CStr::from_ptr(p).to_str().unwrap().to_string();
        sq_string_free(p);
        s
    }

    #[test]
    fn full_round_trip() {
        let dir = workspace_dir();
        let path = CString::new(dir.path().join("ws.toml").to_str().unwrap()).unwrap();
        unsafe {
            let mut ws: *mut SqWorkspace = ptr::null_mut();
            assert_eq!(sq_workspace_open(path.as_ptr(), &mut ws), SQ_OK);

            let mut json: *mut c_char = ptr::null_mut();
            assert_eq!(sq_workspace_classify_json(ws, &mut json), SQ_OK);
            let parsed: serde_json::Value =
                serde_json::from_str(&take_string(json)).unwrap();
            assert_eq!(parsed["verdict"], "tractable");

            let mut engine: *mut SqEngine = ptr::null_mut();
            assert_eq!(sq_workspace_build(ws, 0, &mut engine), SQ_OK);

            let mut count: *mut c_char = ptr::null_mut();
            assert_eq!(sq_engine_count(engine, &mut count), SQ_OK);
            assert_eq!(take_string(count), "2");

            let mut line: *mut c_char = ptr::null_mut();
            assert_eq!(sq_engine_get_csv(engine, ws, 1, &mut line), SQ_OK);
            assert_eq!(take_string(line), "5,31");
            assert_eq!(sq_engine_get_csv(engine, ws, 2, &mut line), SQ_OK);
            assert_eq!(take_string(line), "6,50");
            assert_eq!(sq_engine_get_csv(engine, ws, 3, &mut line), SQ_PAST_END);
            assert_eq!(sq_engine_get_csv(engine, ws, 0, &mut line), SQ_ERR_ARGUMENT);

            sq_engine_free(engine);
            sq_workspace_free(ws);
        }
    }

    #[test]
    fn open_failure_reports_error() {
        let path = CString::new("/nonexistent/ws.toml").unwrap();
        unsafe {
            let mut ws: *mut SqWorkspace = ptr::null_mut();
            assert_eq!(sq_workspace_open(path.as_ptr(), &mut ws), SQ_ERR_LOAD);
            let msg = CStr::from_ptr(sq_last_error()).to_str().unwrap();
            assert!(!msg.is_empty());
            assert_eq!(sq_workspace_open(ptr::null(), &mut ws), SQ_ERR_ARGUMENT);
        }
    }

    #[test]
    fn intractable_workspace_refuses_to_build() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "r.csv", "1,4\n");
        write(dir.path(), "s.csv", "2,7\n");
        write(dir.path(), "q.txt", "Q(*,x,y) :- R(x), S(y).\n");
        write(
            dir.path(),
            "ws.toml",
            "query = \"q.txt\"\nsemiring = \"counting\"\n\n[[relations]]\nname = \"R\"\npath = \"r.csv\"\narity = 1\nannot_col = true\n\n[[relations]]\nname = \"S\"\npath = \"s.csv\"\narity = 1\nannot_col = true\n",
        );
        let path = CString::new(dir.path().join("ws.toml").to_str().unwrap()).unwrap();
        unsafe {
            let mut ws: *mut SqWorkspace = ptr::null_mut();
            assert_eq!(sq_workspace_open(path.as_ptr(), &mut ws), SQ_OK);
            let mut json: *mut c_char = ptr::null_mut();
            assert_eq!(sq_workspace_classify_json(ws, &mut json), SQ_INTRACTABLE);
            sq_string_free(json);
            let mut engine: *mut SqEngine = ptr::null_mut();
            assert_eq!(sq_workspace_build(ws, 0, &mut engine), SQ_INTRACTABLE);
            sq_workspace_free(ws);
        }
    }
}
