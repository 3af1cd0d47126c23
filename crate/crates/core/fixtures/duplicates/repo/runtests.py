"""Runs test functions under tests/ and reports them as TAP.

Usage: python3 runtests.py [TEST_ID ...], where TEST_ID is path::function.
"""
import importlib.util
import pathlib
import sys
import traceback

ROOT = pathlib.Path(__file__).resolve().parent
sys.path.insert(0, str(ROOT))


def load(path):
    spec = importlib.util.spec_from_file_location(path.stem, path)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def collect(selected):
    wanted = {}
    for test_id in selected:
        file, _, name = test_id.partition("::")
        wanted.setdefault(file, []).append(name)
    files = wanted or {str(p.relative_to(ROOT)): None for p in sorted((ROOT / "tests").glob("test_*.py"))}
    for file, names in files.items():
        module = load(ROOT / file)
        found = [n for n, v in vars(module).items() if n.startswith("test_") and callable(v)]
        for name in names or found:
            yield f"{file}::{name}", getattr(module, name, None)


def main(argv):
    tests = list(collect(argv))
    print(f"1..{len(tests)}")
    failed = 0
    for i, (test_id, fn) in enumerate(tests, 1):
        try:
            if fn is None:
                raise LookupError(f"no test named {test_id}")
            fn()
        except Exception:
            failed += 1
            print(f"not ok {i} - {test_id}")
            for line in traceback.format_exc().splitlines():
                print(f"# {line}")
        else:
            print(f"ok {i} - {test_id}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
