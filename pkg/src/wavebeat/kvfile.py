"""Plain ``key = value`` text files used for configs."""

import os


def read_kv(path) -> dict[str, str]:
    out = {}
    with open(os.fspath(path)) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_kv(path, mapping: dict) -> None:
    with open(os.fspath(path), "w") as fh:
        for key, value in mapping.items():
            fh.write(f"{key} = {value}\n")
