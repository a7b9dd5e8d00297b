"""Recompute vectors/*.json with hashlib and the `cryptography` Ed25519 code."""
import hashlib
import json
import pathlib
import sys

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

ROOT = pathlib.Path(__file__).resolve().parent.parent / "vectors"


def sha(*parts):
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.digest()


def identity():
    dealer_id = sha(b"dealer")
    seeds = [bytes(32)] + [sha(f"IV-{i}".encode()) for i in range(1, 6)]
    out = []
    for seed in seeds:
        pk = Ed25519PrivateKey.from_private_bytes(seed).public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        out.append({
            "seed_hex": seed.hex(),
            "public_key_hex": pk.hex(),
            "ivtp_id_hex": sha(dealer_id, pk, (0).to_bytes(8, "big")).hex(),
        })
    return out


def merkle_root(leaves):
    level = list(leaves)
    while True:
        nxt = []
        for i in range(0, len(level), 2):
            left = level[i]
            right = level[i + 1] if i + 1 < len(level) else left
            nxt.append(sha(left, right))
        level = nxt
        if len(level) == 1:
            return level[0]


def merkle():
    out = []
    for n in [1, 2, 3, 4, 5, 7, 8, 13]:
        leaves = [sha(f"leaf-{i}".encode()) for i in range(n)]
        out.append({"leaves_hex": [l.hex() for l in leaves], "root_hex": merkle_root(leaves).hex()})
    return out


def main():
    ok = True
    for name, expected in [("identity.json", identity()), ("merkle.json", merkle())]:
        got = json.loads((ROOT / name).read_text())
        same = got == expected
        ok &= same
        print(f"{name}: {'match' if same else 'MISMATCH'}")
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
