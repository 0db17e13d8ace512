"""Straight-line scalar reference implementations used as test oracles.

Everything here is written with explicit Python loops over floats, no
vectorized numpy, so agreement with the package is evidence of correctness
rather than shared code. Inputs are nested lists (or anything indexable two
levels deep); outputs are nested lists or floats.
"""

import math


def _zeros(rows, cols):
    return [[0.0 for _ in range(cols)] for _ in range(rows)]


def _shape(matrix):
    return len(matrix), len(matrix[0])


def _matmul(a, b):
    n, k = _shape(a)
    k2, m = _shape(b)
    assert k == k2
    out = _zeros(n, m)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i][t] * b[t][j]
            out[i][j] = acc
    return out


def _transpose(a):
    n, m = _shape(a)
    return [[a[i][j] for i in range(n)] for j in range(m)]


def _col_normalize(x):
    d, length = _shape(x)
    out = _zeros(d, length)
    for col in range(length):
        norm = math.sqrt(sum(x[row][col] ** 2 for row in range(d)))
        for row in range(d):
            out[row][col] = x[row][col] / norm
    return out


def _col_softmax(scores):
    n, m = _shape(scores)
    out = _zeros(n, m)
    for col in range(m):
        exps = [math.exp(scores[row][col]) for row in range(n)]
        total = sum(exps)
        for row in range(n):
            out[row][col] = exps[row] / total
    return out


def _row_softmax(scores):
    return _transpose(_col_softmax(_transpose(scores)))


def _tanh_add(accumulated, attended):
    d, length = _shape(attended)
    out = _zeros(d, length)
    for i in range(d):
        for j in range(length):
            total = attended[i][j]
            for mat in accumulated:
                total += mat[i][j]
            out[i][j] = math.tanh(total)
    return out


def oracle_caf(x_audio, x_cbp, stage_weights):
    """Multi-stage cross-attention fusion with dense skips.

    stage_weights is one (d_audio, d_cbp) matrix per stage (repeat the same
    object for shared weights). Returns (fused_audio, fused_cbp).
    """
    acc_audio = [x_audio]
    acc_cbp = [x_cbp]
    for weight in stage_weights:
        prev_audio = acc_audio[-1]
        prev_cbp = acc_cbp[-1]
        norm_audio = _col_normalize(prev_audio)
        norm_cbp = _col_normalize(prev_cbp)
        corr = _matmul(_matmul(_transpose(norm_audio), weight), norm_cbp)
        attn_audio = _col_softmax(corr)
        attn_cbp = _col_softmax(_transpose(corr))
        attended_audio = _matmul(prev_audio, attn_audio)
        attended_cbp = _matmul(prev_cbp, attn_cbp)
        acc_audio.append(_tanh_add(acc_audio, attended_audio))
        acc_cbp.append(_tanh_add(acc_cbp, attended_cbp))
    return acc_audio[-1], acc_cbp[-1]


def oracle_ccp(x_cbp, x_vlp, w_query, w_key, w_value_cbp, w_value_vlp):
    """Shared-attention collaboration over the concatenated views.

    Views are (T, d) row-major; returns (z_cbp, z_vlp).
    """
    num_segments, _ = _shape(x_cbp)
    concat = [x_cbp[t] + x_vlp[t] for t in range(num_segments)]
    queries = _matmul(concat, w_query)
    keys = _matmul(concat, w_key)
    d_k = len(w_query[0])
    scores = _zeros(num_segments, num_segments)
    for i in range(num_segments):
        for j in range(num_segments):
            acc = 0.0
            for t in range(d_k):
                acc += queries[i][t] * keys[j][t]
            scores[i][j] = acc / math.sqrt(d_k)
    attn = _row_softmax(scores)
    z_cbp = _matmul(attn, _matmul(x_cbp, w_value_cbp))
    z_vlp = _matmul(attn, _matmul(x_vlp, w_value_vlp))
    return z_cbp, z_vlp


def oracle_decorrelation(feats_audio, feats_cbp, row_normalize=False):
    """Sum over both views of || X X^T - I ||_F^2 on (d, L) features."""
    total = 0.0
    for feats in (feats_audio, feats_cbp):
        if row_normalize:
            feats = [
                [v / math.sqrt(sum(w ** 2 for w in row)) for v in row]
                for row in feats
            ]
        d, _ = _shape(feats)
        for i in range(d):
            for j in range(d):
                gram = sum(a * b for a, b in zip(feats[i], feats[j]))
                residual = gram - (1.0 if i == j else 0.0)
                total += residual ** 2
    return total


def oracle_instance_discrimination(z_vlp, z_cbp, index, bank_vlp, bank_cbp, tau):
    """Two-view -log softmax over bank similarities of the normalized z."""
    total = 0.0
    for z, bank in ((z_vlp, bank_vlp), (z_cbp, bank_cbp)):
        norm = math.sqrt(sum(v ** 2 for v in z))
        z_hat = [v / norm for v in z]
        logits = [sum(a * b for a, b in zip(row, z_hat)) / tau for row in bank]
        exps = [math.exp(v) for v in logits]
        total += -math.log(exps[index] / sum(exps))
    return total


def oracle_iou(a, b):
    """Temporal IoU of [start, end) intervals given as pairs."""
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0.0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def _rank(proposal):
    # score desc, start asc, shorter first, then video id
    return (-proposal.score, proposal.start_s, proposal.end_s - proposal.start_s,
            proposal.video_id)


def oracle_average_precision(proposals, gts, iou_threshold):
    """Rank-walk AP with greedy best-IoU matching, one proposal per GT.

    Matches the documented definition step by step: proposals in rank order,
    each may claim the unmatched same-video GT of highest IoU >= threshold
    (ties to the earliest GT start); AP is the mean of precision at the true
    positive ranks over the GT count.
    """
    if not gts:
        return 1.0 if not proposals else 0.0
    ranked = sorted(proposals, key=_rank)
    matched = [False] * len(gts)
    hits = 0
    precision_sum = 0.0
    for rank, proposal in enumerate(ranked, start=1):
        best = None
        for g, gt in enumerate(gts):
            if matched[g] or gt.video_id != proposal.video_id:
                continue
            iou = oracle_iou((proposal.start_s, proposal.end_s),
                             (gt.start_s, gt.end_s))
            if iou < iou_threshold:
                continue
            if best is None or iou > best[0] or (iou == best[0]
                                                 and gt.start_s < gts[best[1]].start_s):
                best = (iou, g)
        if best is not None:
            matched[best[1]] = True
            hits += 1
            precision_sum += hits / rank
    return precision_sum / len(gts)


def oracle_nms_keep(proposals, iou_threshold):
    """Brute-force survivor set of greedy per-(video, class) suppression."""
    groups = {}
    for proposal in proposals:
        groups.setdefault((proposal.video_id, proposal.class_index),
                          []).append(proposal)
    kept = []
    for key in sorted(groups):
        survivors = []
        for candidate in sorted(groups[key], key=_rank):
            ok = True
            for other in survivors:
                iou = oracle_iou((candidate.start_s, candidate.end_s),
                                 (other.start_s, other.end_s))
                if iou >= iou_threshold:
                    ok = False
            if ok:
                survivors.append(candidate)
        kept.extend(survivors)
    return kept
