"""Independent oracle for the seeded sampling stream.

Pure-Python ChaCha8 keyed with SHA-256(generator id, label, seed), rejection
sampling for bounded integers, and Fisher-Yates. Writes rng_oracle.json.
"""
import hashlib
import json
import struct

PRNG_ID = b"chacha8+sha256-seed+fisher-yates/v1"
MASK = 0xFFFFFFFF


def rotl(v, c):
    return ((v << c) & MASK) | (v >> (32 - c))


def quarter(x, a, b, c, d):
    x[a] = (x[a] + x[b]) & MASK; x[d] = rotl(x[d] ^ x[a], 16)
    x[c] = (x[c] + x[d]) & MASK; x[b] = rotl(x[b] ^ x[c], 12)
    x[a] = (x[a] + x[b]) & MASK; x[d] = rotl(x[d] ^ x[a], 8)
    x[c] = (x[c] + x[d]) & MASK; x[b] = rotl(x[b] ^ x[c], 7)


def block(key, counter):
    const = [0x61707865, 0x3320646E, 0x79622D32, 0x6B206574]
    state = const + list(key) + [counter & MASK, counter >> 32, 0, 0]
    x = state[:]
    for _ in range(4):  # 8 rounds
        quarter(x, 0, 4, 8, 12); quarter(x, 1, 5, 9, 13)
        quarter(x, 2, 6, 10, 14); quarter(x, 3, 7, 11, 15)
        quarter(x, 0, 5, 10, 15); quarter(x, 1, 6, 11, 12)
        quarter(x, 2, 7, 8, 13); quarter(x, 3, 4, 9, 14)
    return [(a + b) & MASK for a, b in zip(x, state)]


class Rng:
    def __init__(self, label, seed):
        h = hashlib.sha256(PRNG_ID + b"\0" + label.encode() + b"\0" + struct.pack("<Q", seed)).digest()
        self.key = struct.unpack("<8I", h)
        self.counter = 0
        self.words = []

    def u32(self):
        if not self.words:
            self.words = block(self.key, self.counter)
            self.counter += 1
        return self.words.pop(0)

    def u64(self):
        lo = self.u32()
        return lo | (self.u32() << 32)

    def below(self, bound):
        m = 2**64 - 1
        zone = m - (m % bound) - 1
        while True:
            v = self.u64()
            if v <= zone:
                return v % bound

    def shuffle(self, items):
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, items, k):
        pool = list(items)
        k = min(k, len(pool))
        for i in range(k):
            j = i + self.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


def main():
    out = {}
    r = Rng("oracle", 42)
    out["u64"] = [str(r.u64()) for _ in range(6)]
    ids = [f"r{i:04}" for i in range(150)]
    drawn = Rng("split/repo:acme/widgets", 3).sample(sorted(ids), 96)
    out["split"] = {"ids": "r0000..r0149", "domain": "repo:acme/widgets", "seed": 3,
                    "train": drawn[:32], "dev": drawn[32:64], "test": drawn[64:96]}
    items = [f"d{i}" for i in range(8)]
    rng = Rng("demo-orders", 5)
    orders = [items[:]]
    for _ in range(4):
        v = items[:]
        rng.shuffle(v)
        orders.append(v)
    out["orders"] = {"items": items, "seed": 5, "orders": orders}
    pool = [f"p{i:03}" for i in range(500)]
    out["random_baseline"] = {"label": "x", "seed": 9, "n": 12,
                              "ids": Rng("random/x", 9).sample(sorted(pool), 12)}
    with open("rng_oracle.json", "w") as f:
        json.dump(out, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
