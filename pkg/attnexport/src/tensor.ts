/**
 * Small dense-math kernels on Float32Array. Row-major throughout; matmul is
 * written i-k-j so the inner loop walks both operands sequentially, which is
 * what V8 vectorises best.
 */

/** c = a (m x k) @ b (k x n), row-major; inner dimension blocked by four. */
export function matmul(a: Float32Array, m: number, k: number, b: Float32Array, n: number): Float32Array {
  const c = new Float32Array(m * n);
  const kBlocked = k - (k % 4);
  for (let i = 0; i < m; i++) {
    const aRow = i * k;
    const cRow = i * n;
    for (let l = 0; l < kBlocked; l += 4) {
      const a0 = a[aRow + l];
      const a1 = a[aRow + l + 1];
      const a2 = a[aRow + l + 2];
      const a3 = a[aRow + l + 3];
      const b0 = l * n;
      const b1 = b0 + n;
      const b2 = b1 + n;
      const b3 = b2 + n;
      for (let j = 0; j < n; j++) {
        c[cRow + j] += a0 * b[b0 + j] + a1 * b[b1 + j] + a2 * b[b2 + j] + a3 * b[b3 + j];
      }
    }
    for (let l = kBlocked; l < k; l++) {
      const av = a[aRow + l];
      const bRow = l * n;
      for (let j = 0; j < n; j++) {
        c[cRow + j] += av * b[bRow + j];
      }
    }
  }
  return c;
}

/** Add a length-n bias to every row of x (m x n), in place. */
export function addBias(x: Float32Array, m: number, n: number, bias: Float32Array): Float32Array {
  for (let i = 0; i < m; i++) {
    const row = i * n;
    for (let j = 0; j < n; j++) x[row + j] += bias[j];
  }
  return x;
}

/** y = LN(x) per row with learned gain/shift. */
export function layerNorm(
  x: Float32Array,
  rows: number,
  dim: number,
  gamma: Float32Array,
  beta: Float32Array,
  eps = 1e-6,
): Float32Array {
  const out = new Float32Array(rows * dim);
  for (let i = 0; i < rows; i++) {
    const row = i * dim;
    let mean = 0;
    for (let j = 0; j < dim; j++) mean += x[row + j];
    mean /= dim;
    let variance = 0;
    for (let j = 0; j < dim; j++) {
      const d = x[row + j] - mean;
      variance += d * d;
    }
    variance /= dim;
    const inv = 1.0 / Math.sqrt(variance + eps);
    for (let j = 0; j < dim; j++) {
      out[row + j] = (x[row + j] - mean) * inv * gamma[j] + beta[j];
    }
  }
  return out;
}

/** Numerically-stable softmax over each row of x (m x n), in place. */
export function softmaxRows(x: Float32Array, m: number, n: number): Float32Array {
  for (let i = 0; i < m; i++) {
    const row = i * n;
    let max = -Infinity;
    for (let j = 0; j < n; j++) if (x[row + j] > max) max = x[row + j];
    let sum = 0;
    for (let j = 0; j < n; j++) {
      const e = Math.exp(x[row + j] - max);
      x[row + j] = e;
      sum += e;
    }
    for (let j = 0; j < n; j++) x[row + j] /= sum;
  }
  return x;
}

/** Abramowitz-Stegun 7.1.26 erf approximation (|error| < 1.5e-7). */
export function erf(x: number): number {
  const sign = x < 0 ? -1 : 1;
  const ax = Math.abs(x);
  const t = 1.0 / (1.0 + 0.3275911 * ax);
  const y =
    1.0 -
    (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t + 0.254829592) *
      t *
      Math.exp(-ax * ax);
  return sign * y;
}

/** Exact (erf-based) GELU applied in place. */
export function geluInPlace(x: Float32Array): Float32Array {
  for (let i = 0; i < x.length; i++) {
    const v = x[i];
    x[i] = 0.5 * v * (1.0 + erf(v / Math.SQRT2));
  }
  return x;
}

/** a += b elementwise. */
export function addInPlace(a: Float32Array, b: Float32Array): Float32Array {
  for (let i = 0; i < a.length; i++) a[i] += b[i];
  return a;
}
