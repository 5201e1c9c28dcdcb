"""Pseudo-identities and authentication tokens.

A pseudo-identity masks a real identifier with a hash of a Diffie-Hellman
value: pid = id XOR H(y_cn^alpha).  Only the core network, holding x_cn, can
strip the mask from (g^alpha, pid) and recover the identifier, which is what
makes misbehaving senders traceable without being linkable by anyone else.

Two token layers ride on Schnorr-style linear relations:

  core-network token   long-lived: z_cn = u + x_cn * H1(U, T_exp, pid)
  per-message token    short-lived, derived by the vehicle gateway per
                       outbound message: z_user = w + H1(U, T_cur) * kappa,
                       transmitted as the sum z_cn + z_user

A receiver verifies the summed token against the issuer public key and the
sender's signing-key relation in one equation:

  g^z_sum = U * W * y_cn^H1(U, T_exp, pid) * (B * X^H1(B, pid))^H1(U, T_cur)

Timestamps are u64 seconds of simulated time; expiry and clock-skew windows
are the caller's policy knobs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .group import (
    GroupElement,
    GroupParams,
    H1_TOKEN_CN,
    H1_TOKEN_USER,
    H1_IBS_KEY,
    Scalar,
    decode_element,
    decode_scalar,
    hash_to_scalar,
)
from .ibs import IbsMspk, IbsSigningKey
from .symcrypto import mask_bytes


class TokenError(ValueError):
    pass


class TokenExpired(TokenError):
    pass


class Reject(str, Enum):
    OK = "ok"
    EXPIRED = "expired"
    STALE = "stale"
    EQUATION_FAILED = "equation-failed"


@dataclass(frozen=True)
class PseudoIdentity:
    pid: bytes
    alpha_pub: GroupElement  # g^alpha


def make_pid(real_id: bytes, y_cn: GroupElement, alpha: Scalar) -> PseudoIdentity:
    """Mask an identifier under the core network's public key."""
    params = y_cn.params
    shared = y_cn.exp(alpha)
    pid = mask_bytes(real_id, shared, "pid-mask")
    return PseudoIdentity(pid=pid, alpha_pub=params.generator().exp(alpha))


def recover_pid(pid: bytes, alpha_pub: GroupElement, x_cn: Scalar) -> bytes:
    """Core-network side unmasking: pid XOR H((g^alpha)^x_cn)."""
    shared = alpha_pub.exp(x_cn)
    return mask_bytes(pid, shared, "pid-mask")


@dataclass(frozen=True)
class CnToken:
    u_pub: GroupElement
    t_exp: int
    z_cn: Scalar


def issue_cn_token(
    params: GroupParams, x_cn: Scalar, pid: bytes, t_exp: int, rng
) -> CnToken:
    u = rng.scalar_nonzero(params)
    u_pub = params.generator().exp(u)
    h = hash_to_scalar(params, H1_TOKEN_CN, u_pub, t_exp, pid)
    return CnToken(u_pub=u_pub, t_exp=t_exp, z_cn=u.add(x_cn.mul(h)))


def verify_cn_token(params: GroupParams, y_cn: GroupElement, tok: CnToken, pid: bytes) -> bool:
    h = hash_to_scalar(params, H1_TOKEN_CN, tok.u_pub, tok.t_exp, pid)
    return params.generator().exp(tok.z_cn) == tok.u_pub.mul(y_cn.exp(h))


@dataclass(frozen=True)
class UserToken:
    u_pub: GroupElement
    t_exp: int
    z_sum: Scalar
    w_pub: GroupElement
    b: GroupElement
    t_cur: int


def derive_user_token(
    params: GroupParams,
    cn: CnToken,
    signer: IbsSigningKey,
    t_cur: int,
    rng,
) -> UserToken:
    """Per-message token: fold a fresh Schnorr response into the CN token."""
    if t_cur > cn.t_exp:
        raise TokenExpired("core-network token expired")
    w = rng.scalar_nonzero(params)
    w_pub = params.generator().exp(w)
    h = hash_to_scalar(params, H1_TOKEN_USER, cn.u_pub, t_cur)
    z_user = w.add(h.mul(signer.kappa))
    return UserToken(
        u_pub=cn.u_pub,
        t_exp=cn.t_exp,
        z_sum=cn.z_cn.add(z_user),
        w_pub=w_pub,
        b=signer.b,
        t_cur=t_cur,
    )


def verify_user_token(
    tok: UserToken,
    mspk: IbsMspk,
    y_cn: GroupElement,
    pid: bytes,
    now: int,
    skew: int,
) -> Reject:
    """Check freshness then the combined token equation.

    Returns a reason code instead of raising: rejection is a protocol value.
    """
    params = mspk.params
    if now > tok.t_exp:
        return Reject.EXPIRED
    if abs(now - tok.t_cur) > skew:
        return Reject.STALE
    h_cn = hash_to_scalar(params, H1_TOKEN_CN, tok.u_pub, tok.t_exp, pid)
    h_user = hash_to_scalar(params, H1_TOKEN_USER, tok.u_pub, tok.t_cur)
    h_key = hash_to_scalar(params, H1_IBS_KEY, tok.b, pid)
    lhs = params.generator().exp(tok.z_sum)
    rhs = (
        tok.u_pub
        .mul(tok.w_pub)
        .mul(y_cn.exp(h_cn))
        .mul(tok.b.mul(mspk.x_pub.exp(h_key)).exp(h_user))
    )
    return Reject.OK if lhs == rhs else Reject.EQUATION_FAILED


# ---------------------------------------------------------------------------
# serialization: fixed field order, fixed-width elements, 8-byte timestamps
# ---------------------------------------------------------------------------

def cn_token_to_bytes(tok: CnToken) -> bytes:
    return tok.u_pub.encode() + tok.t_exp.to_bytes(8, "big") + tok.z_cn.encode()


def cn_token_from_bytes(data: bytes, params: GroupParams) -> CnToken:
    pw, qw = params.pbytes, params.qbytes
    if len(data) != pw + 8 + qw:
        raise TokenError("serialized cn token has wrong length")
    return CnToken(
        u_pub=decode_element(data[:pw], params),
        t_exp=int.from_bytes(data[pw:pw + 8], "big"),
        z_cn=decode_scalar(data[pw + 8:], params),
    )


def user_token_to_bytes(tok: UserToken) -> bytes:
    return (
        tok.u_pub.encode()
        + tok.t_exp.to_bytes(8, "big")
        + tok.z_sum.encode()
        + tok.w_pub.encode()
        + tok.b.encode()
        + tok.t_cur.to_bytes(8, "big")
    )


def user_token_from_bytes(data: bytes, params: GroupParams) -> UserToken:
    pw, qw = params.pbytes, params.qbytes
    if len(data) != 3 * pw + 2 * 8 + qw:
        raise TokenError("serialized user token has wrong length")
    off = 0
    u_pub = decode_element(data[off:off + pw], params); off += pw
    t_exp = int.from_bytes(data[off:off + 8], "big"); off += 8
    z_sum = decode_scalar(data[off:off + qw], params); off += qw
    w_pub = decode_element(data[off:off + pw], params); off += pw
    b = decode_element(data[off:off + pw], params); off += pw
    t_cur = int.from_bytes(data[off:off + 8], "big")
    return UserToken(u_pub=u_pub, t_exp=t_exp, z_sum=z_sum, w_pub=w_pub, b=b, t_cur=t_cur)
