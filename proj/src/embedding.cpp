#include <Eigen/Eigenvalues>

#include "gsshare/codec.hpp"

namespace gsshare {

EmbeddingFit fit_embedding(const Eigen::MatrixXd& attrs, int d) {
  const Eigen::Index n = attrs.rows(), a = attrs.cols();
  if (n == 0) throw Error(ErrorCode::InsufficientData, "no anchors to fit an embedding");
  if (d < 1 || d > a) throw Error(ErrorCode::InvalidArgument, "embedding dim must be in [1, A]");

  EmbeddingFit fit;
  fit.decoder.mean = attrs.colwise().mean().transpose();
  const Eigen::MatrixXd centered = attrs.rowwise() - fit.decoder.mean.transpose();
  Eigen::MatrixXd gram = centered.transpose() * centered;
  gram = 0.5 * (gram + gram.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);

  fit.energies.resize(a);
  fit.decoder.basis.resize(a, d);
  for (Eigen::Index i = 0; i < a; ++i) fit.energies[i] = std::max(0.0, eig.eigenvalues()[a - 1 - i]);
  for (int j = 0; j < d; ++j) {
    Eigen::VectorXd v = eig.eigenvectors().col(a - 1 - j);
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < a; ++i)
      if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    if (v[arg] < 0) v = -v;
    fit.decoder.basis.col(j) = v;
  }
  fit.embeddings = centered * fit.decoder.basis;
  return fit;
}

Eigen::MatrixXd reconstruct_attributes(const Eigen::MatrixXd& embeddings, const DecoderWeights& w) {
  if (embeddings.cols() != w.dim())
    throw Error(ErrorCode::DimensionMismatch, "embedding width does not match decoder");
  Eigen::MatrixXd out = embeddings * w.basis.transpose();
  out.rowwise() += w.mean.transpose();
  return out;
}

std::vector<Gaussian> gaussians_from_attributes(const Vec3& anchor_position,
                                                const Eigen::MatrixX3d& scales,
                                                const Eigen::MatrixX3d& offsets,
                                                const Eigen::VectorXd& attrs) {
  const Eigen::Index k = scales.rows();
  if (offsets.rows() != k || attrs.size() != k * kAttrsPerGaussian)
    throw Error(ErrorCode::DimensionMismatch, "anchor rows do not match attribute row");
  std::vector<Gaussian> out(static_cast<size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) {
    Gaussian& g = out[i];
    const Eigen::Index o = i * kAttrsPerGaussian;
    g.position = anchor_position + offsets.row(i).transpose();
    g.scale = scales.row(i).transpose();
    g.kind = g.scale.z() == 0.0 ? GaussianKind::Flat2D : GaussianKind::Isotropic3D;
    g.color = attrs.segment<3>(o);
    g.opacity = attrs[o + 3];
    g.rotation = Quat(attrs[o + 4], attrs[o + 5], attrs[o + 6], attrs[o + 7]);
    g = sanitized(g);
  }
  return out;
}

std::vector<Gaussian> decode_anchor(const AnchorFeature& f, const DecoderWeights& w) {
  const Eigen::Index k = f.scales.rows();
  if (f.offsets.rows() != k || w.attr_dim() != k * kAttrsPerGaussian ||
      f.embedding.size() != w.dim() || w.basis.rows() != w.attr_dim())
    throw Error(ErrorCode::DimensionMismatch, "anchor feature does not match decoder");
  return gaussians_from_attributes(f.anchor_position, f.scales, f.offsets,
                                   w.mean + w.basis * f.embedding);
}

}  // namespace gsshare
