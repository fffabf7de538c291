#!/usr/bin/env python3
"""Table-free reference AES-128-GCM used to freeze known-answer vectors.

Nothing here shares code with the C++ library. The S-box is derived from
GF(2^8) inversion, GHASH is the bit-serial multiply from the GCM definition.
Run with --check to validate against the published GCM test cases, or with
--emit to print the frozen vector table consumed by the C++ tests.
"""
import argparse
import random


def gf_mul(a, b):
    r = 0
    while b:
        if b & 1:
            r ^= a
        a <<= 1
        if a & 0x100:
            a ^= 0x11B
        b >>= 1
    return r


def build_sbox():
    inv = [0] * 256
    for x in range(1, 256):
        for y in range(1, 256):
            if gf_mul(x, y) == 1:
                inv[x] = y
                break
    sbox = []
    for x in range(256):
        b = inv[x]
        s = b
        for i in range(1, 5):
            s ^= ((b << i) | (b >> (8 - i))) & 0xFF
        sbox.append(s ^ 0x63)
    return sbox


SBOX = build_sbox()


def expand_key(key):
    words = [list(key[4 * i:4 * i + 4]) for i in range(4)]
    rcon = 1
    for i in range(4, 44):
        t = list(words[i - 1])
        if i % 4 == 0:
            t = t[1:] + t[:1]
            t = [SBOX[v] for v in t]
            t[0] ^= rcon
            rcon = gf_mul(rcon, 2)
        words.append([words[i - 4][j] ^ t[j] for j in range(4)])
    return [sum(words[4 * r:4 * r + 4], []) for r in range(11)]


def aes_encrypt_block(round_keys, block):
    s = [block[i] ^ round_keys[0][i] for i in range(16)]
    for rnd in range(1, 11):
        s = [SBOX[v] for v in s]
        s = [s[(r + 4 * ((c + r) % 4))] for c in range(4) for r in range(4)]
        if rnd != 10:
            out = []
            for c in range(4):
                col = s[4 * c:4 * c + 4]
                for r in range(4):
                    out.append(gf_mul(col[r], 2) ^ gf_mul(col[(r + 1) % 4], 3)
                               ^ col[(r + 2) % 4] ^ col[(r + 3) % 4])
            s = out
        s = [s[i] ^ round_keys[rnd][i] for i in range(16)]
    return bytes(s)


def ghash_mul(x, y):
    R = 0xE1 << 120
    z = 0
    v = y
    for i in range(127, -1, -1):
        if (x >> i) & 1:
            z ^= v
        v = (v >> 1) ^ R if v & 1 else v >> 1
    return z


def ghash(h, data):
    y = 0
    for i in range(0, len(data), 16):
        y = ghash_mul(y ^ int.from_bytes(data[i:i + 16], "big"), h)
    return y


def pad16(b):
    return b + bytes((-len(b)) % 16)


def gcm_encrypt(key, iv, pt, aad):
    assert len(key) == 16 and len(iv) == 12
    rk = expand_key(key)
    h = int.from_bytes(aes_encrypt_block(rk, bytes(16)), "big")
    j0 = iv + b"\x00\x00\x00\x01"
    ct = bytearray()
    ctr = int.from_bytes(j0[12:], "big")
    for i in range(0, len(pt), 16):
        ctr = (ctr + 1) & 0xFFFFFFFF
        ks = aes_encrypt_block(rk, iv + ctr.to_bytes(4, "big"))
        chunk = pt[i:i + 16]
        ct += bytes(a ^ b for a, b in zip(chunk, ks))
    lens = (len(aad) * 8).to_bytes(8, "big") + (len(pt) * 8).to_bytes(8, "big")
    s = ghash(h, pad16(aad) + pad16(bytes(ct)) + lens)
    tag = bytes(a ^ b for a, b in zip(s.to_bytes(16, "big"), aes_encrypt_block(rk, j0)))
    return bytes(ct), tag


# Published GCM test cases 1-4 (AES-128).
PUBLISHED = [
    ("00000000000000000000000000000000", "000000000000000000000000", "", "", "",
     "58e2fccefa7e3061367f1d57a4e7455a"),
    ("00000000000000000000000000000000", "000000000000000000000000",
     "00000000000000000000000000000000", "", "0388dace60b6a392f328c2b971b2fe78",
     "ab6e47d42cec13bdf53a67b21257bddf"),
    ("feffe9928665731c6d6a8f9467308308", "cafebabefacedbaddecaf888",
     "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a72"
     "1c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b391aafd255", "",
     "42831ec2217774244b7221b784d0d49ce3aa212f2c02a4e035c17e2329aca12e"
     "21d514b25466931c7d8f6a5aac84aa051ba30b396a0aac973d58e091473f5985",
     "4d5c2af327cd64a62cf35abd2ba6fab4"),
    ("feffe9928665731c6d6a8f9467308308", "cafebabefacedbaddecaf888",
     "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a72"
     "1c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b39",
     "feedfacedeadbeeffeedfacedeadbeefabaddad2",
     "42831ec2217774244b7221b784d0d49ce3aa212f2c02a4e035c17e2329aca12e"
     "21d514b25466931c7d8f6a5aac84aa051ba30b396a0aac973d58e091",
     "5bc94fbc3221a5db94fae95ae7121a47"),
]


def check():
    for k, iv, pt, aad, ct, tag in PUBLISHED:
        got_ct, got_tag = gcm_encrypt(bytes.fromhex(k), bytes.fromhex(iv),
                                      bytes.fromhex(pt), bytes.fromhex(aad))
        assert got_ct.hex() == ct, (got_ct.hex(), ct)
        assert got_tag.hex() == tag, (got_tag.hex(), tag)
    print("published vectors: ok")


def generated_cases():
    rng = random.Random(0x5EC0DE)
    # (plaintext length, aad length) pairs covering empty, AAD-only,
    # sub-block, exact-block and multi-block shapes.
    shapes = [(0, 0), (0, 13), (0, 16), (0, 41), (1, 0), (15, 0), (16, 0),
              (17, 5), (31, 20), (32, 32), (33, 1), (47, 0), (48, 7),
              (63, 64), (64, 3), (65, 17), (100, 0), (127, 12), (128, 128),
              (200, 9), (255, 30), (256, 0), (511, 33), (1024, 16)]
    for pt_len, aad_len in shapes:
        key = bytes(rng.getrandbits(8) for _ in range(16))
        iv = bytes(rng.getrandbits(8) for _ in range(12))
        pt = bytes(rng.getrandbits(8) for _ in range(pt_len))
        aad = bytes(rng.getrandbits(8) for _ in range(aad_len))
        ct, tag = gcm_encrypt(key, iv, pt, aad)
        yield key, iv, pt, aad, ct, tag


def emit():
    rows = [tuple(bytes.fromhex(x) for x in case) for case in PUBLISHED]
    rows += list(generated_cases())
    print("// Generated by tests/oracles/gcm_reference.py --emit. Do not edit.")
    print("// key, iv, plaintext, aad, ciphertext, tag (hex)")
    for key, iv, pt, aad, ct, tag in rows:
        print('{"%s", "%s",\n "%s",\n "%s",\n "%s",\n "%s"},' % (
            key.hex(), iv.hex(), pt.hex(), aad.hex(), ct.hex(), tag.hex()))


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--check", action="store_true")
    ap.add_argument("--emit", action="store_true")
    args = ap.parse_args()
    if args.check or not args.emit:
        check()
    if args.emit:
        emit()
