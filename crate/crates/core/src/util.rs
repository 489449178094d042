//! Small internal helpers: bounded-worker parallel map and retry loops.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

/// Maps `f` over `items` with at most `workers` threads, returning results in
/// input order. `f` receives the item index so callers can key deterministic
/// behavior off it. With `workers <= 1` this degenerates to a plain loop.
pub(crate) fn parallel_map_indexed<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }

    let next = AtomicUsize::new(0);
    let mut chunks: Vec<Vec<(usize, R)>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                let next = &next;
                let f = &f;
                scope.spawn(move || {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break;
                        }
                        out.push((i, f(i, &items[i])));
                    }
                    out
                })
            })
            .collect();
        for handle in handles {
            chunks.push(handle.join().expect("worker panicked"));
        }
    });

    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    for (i, r) in chunks.into_iter().flatten() {
        slots[i] = Some(r);
    }
    slots.into_iter().map(|s| s.expect("missing slot")).collect()
}

/// All balanced top-level `{...}` blocks in `text`, in order. Braces and
/// quotes inside JSON strings are honored, so serialized values containing
/// `{` or `}` do not break the scan.
pub(crate) fn balanced_json_objects(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut objects = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' if depth > 0 => in_string = true,
            b'{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    objects.push(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    objects
}

/// Classifies one failed attempt: worth retrying or fatal.
pub(crate) enum Attempt<E> {
    Retry(E),
    Fatal(E),
}

/// Runs `f` up to `max_attempts` times (minimum one attempt), sleeping
/// `backoff_ms * attempt_number` between retryable failures. Returns the last
/// error when attempts are exhausted.
pub(crate) fn with_retries<T, E>(
    max_attempts: u32,
    backoff_ms: u64,
    mut f: impl FnMut(u32) -> Result<T, Attempt<E>>,
) -> Result<T, E> {
    let max_attempts = max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match f(attempt) {
            Ok(v) => return Ok(v),
            Err(Attempt::Fatal(e)) => return Err(e),
            Err(Attempt::Retry(e)) => {
                if attempt >= max_attempts {
                    return Err(e);
                }
                if backoff_ms > 0 {
                    std::thread::sleep(Duration::from_millis(backoff_ms * u64::from(attempt)));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<usize> = (0..1000).collect();
        let out = parallel_map_indexed(&items, 8, |i, v| {
            assert_eq!(i, *v);
            v * 2
        });
        assert_eq!(out, items.iter().map(|v| v * 2).collect::<Vec<_>>());
    }

    #[test]
    fn parallel_map_empty() {
        let items: Vec<u32> = vec![];
        assert!(parallel_map_indexed(&items, 4, |_, v| *v).is_empty());
    }

    #[test]
    fn retries_stop_on_fatal() {
        let mut calls = 0;
        let r: Result<(), &str> = with_retries(5, 0, |_| {
            calls += 1;
            Err(Attempt::Fatal("boom"))
        });
        assert_eq!(r, Err("boom"));
        assert_eq!(calls, 1);
    }

    #[test]
    fn retries_exhaust() {
        let mut calls = 0;
        let r: Result<(), &str> = with_retries(3, 0, |_| {
            calls += 1;
            Err(Attempt::Retry("flaky"))
        });
        assert_eq!(r, Err("flaky"));
        assert_eq!(calls, 3);
    }

    #[test]
    fn finds_balanced_objects_through_prose_and_strings() {
        let text = r#"sure! here you go: {"input":"a {brace} inside","output":"b\"q"} done {"x":1}"#;
        let blocks = balanced_json_objects(text);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0], r#"{"input":"a {brace} inside","output":"b\"q"}"#);
        assert_eq!(blocks[1], r#"{"x":1}"#);
        assert!(balanced_json_objects("no objects here").is_empty());
        assert!(balanced_json_objects("{unclosed").is_empty());
    }

    #[test]
    fn retries_succeed_midway() {
        let r: Result<u32, &str> = with_retries(3, 0, |attempt| {
            if attempt < 2 {
                Err(Attempt::Retry("flaky"))
            } else {
                Ok(attempt)
            }
        });
        assert_eq!(r, Ok(2));
    }
}
