//! End-to-end gradient check: encoder forward -> block-consistency loss ->
//! encoder backward, against central finite differences over every student
//! parameter.

use massl::data::{augment, AugmentSpec};
use massl::memory::{sample_blocks, Memory, SamplingStrategy};
use massl::model::{backward, forward, forward_cached, ArchConfig, ModelParams};
use massl::numkernel::Mat;
use massl::objective::{massl_loss, LossConfig};
use massl::rng::Rng;

struct Pipeline {
    teacher_views: Vec<Vec<massl::UnitVec>>,
    inputs: Vec<Mat>,
    mem: Memory,
    plan: massl::BlockPlan,
    cfg: LossConfig,
}

impl Pipeline {
    fn loss(&self, params: &ModelParams) -> f64 {
        let student: Vec<_> = self
            .inputs
            .iter()
            .map(|m| forward(params, m).unwrap())
            .collect();
        massl_loss(
            &student,
            &self.teacher_views,
            &self.mem,
            &self.plan,
            &self.cfg,
        )
        .unwrap()
        .loss
    }
}

#[test]
fn full_pipeline_gradient_matches_finite_differences() {
    let started = std::time::Instant::now();

    let arch = ArchConfig {
        input_dim: 6,
        backbone_widths: vec![8],
        head_hidden: 8,
        embed_dim: 4,
    };
    let student = ModelParams::init(&arch, 1).unwrap();
    let teacher = ModelParams::init(&arch, 2).unwrap();
    assert!(
        student.num_params() <= 2000,
        "model too large for the check"
    );

    let batch_size = 4;
    let (k, nb) = (32, 8);
    let mem = Memory::init(k, 4, 3).unwrap();
    let mut rng = Rng::from_seed(4);
    let plan = sample_blocks(k, nb, SamplingStrategy::Stochastic, &mut rng).unwrap();

    // Two augmented global views of one batch.
    let mut base = Mat::zeros(batch_size, 6);
    for v in base.as_mut_slice().iter_mut() {
        *v = rng.normal();
    }
    let spec = AugmentSpec::new(0.1, 0.0, 0.05).unwrap();
    let inputs: Vec<Mat> = (0..2).map(|_| augment(&base, &spec, &mut rng)).collect();

    let teacher_views: Vec<_> = inputs
        .iter()
        .map(|m| forward(&teacher, m).unwrap())
        .collect();
    let cfg = LossConfig {
        tau_s: 0.1,
        tau_t: 0.07,
    };
    let pipe = Pipeline {
        teacher_views,
        inputs,
        mem,
        plan,
        cfg,
    };

    // Analytic gradient: per view, chain the loss's projection gradients
    // through the encoder; sum over views in view order.
    let mut caches = Vec::new();
    let mut student_views = Vec::new();
    for m in &pipe.inputs {
        let (z, cache) = forward_cached(&student, m).unwrap();
        student_views.push(z);
        caches.push(cache);
    }
    let report = massl_loss(
        &student_views,
        &pipe.teacher_views,
        &pipe.mem,
        &pipe.plan,
        &pipe.cfg,
    )
    .unwrap();
    assert_eq!(report.pair_count, 2);
    let mut analytic = student.zeros_grads();
    for (cache, grad_z) in caches.iter().zip(&report.grads) {
        analytic.add_assign(&backward(&student, cache, grad_z).unwrap());
    }

    // Central finite differences over every parameter.
    let eps = 1e-5;
    let scale = analytic.max_abs().max(1e-2);
    let mut worst: f64 = 0.0;
    for li in 0..student.layers.len() {
        let wn = student.layers[li].w.len();
        let bn = student.layers[li].b.len();
        for idx in 0..wn + bn {
            let mut plus = student.clone();
            let mut minus = student.clone();
            let (an, pw, mw) = if idx < wn {
                (
                    analytic.layers[li].w[idx],
                    &mut plus.layers[li].w[idx],
                    &mut minus.layers[li].w[idx],
                )
            } else {
                (
                    analytic.layers[li].b[idx - wn],
                    &mut plus.layers[li].b[idx - wn],
                    &mut minus.layers[li].b[idx - wn],
                )
            };
            *pw += eps;
            *mw -= eps;
            let fd = (pipe.loss(&plus) - pipe.loss(&minus)) / (2.0 * eps);
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(scale);
            worst = worst.max(rel);
        }
    }
    assert!(worst <= 1e-4, "max relative error {worst}");
    assert!(
        started.elapsed().as_secs() < 30,
        "gradient check exceeded 30 s"
    );
    println!(
        "pipeline gradient check: {} params, worst rel err {worst:.3e}, {:?}",
        student.num_params(),
        started.elapsed()
    );
}

#[test]
fn teacher_gets_no_gradient_path() {
    // The loss report only carries gradients for student views; the teacher
    // trees are untouched by a full loss + backward pass.
    let arch = ArchConfig {
        input_dim: 5,
        backbone_widths: vec![6],
        head_hidden: 6,
        embed_dim: 4,
    };
    let student = ModelParams::init(&arch, 7).unwrap();
    let teacher = ModelParams::init(&arch, 8).unwrap();
    let teacher_frozen = teacher.clone();

    let mem = Memory::init(16, 4, 9).unwrap();
    let mut rng = Rng::from_seed(10);
    let plan = sample_blocks(16, 4, SamplingStrategy::Stochastic, &mut rng).unwrap();
    let mut base = Mat::zeros(3, 5);
    for v in base.as_mut_slice().iter_mut() {
        *v = rng.normal();
    }
    let spec = AugmentSpec::new(0.2, 0.0, 0.1).unwrap();
    let inputs: Vec<Mat> = (0..2).map(|_| augment(&base, &spec, &mut rng)).collect();

    let mut student_views = Vec::new();
    let mut caches = Vec::new();
    for m in &inputs {
        let (z, c) = forward_cached(&student, m).unwrap();
        student_views.push(z);
        caches.push(c);
    }
    let teacher_views: Vec<_> = inputs
        .iter()
        .map(|m| forward(&teacher, m).unwrap())
        .collect();

    let report = massl_loss(
        &student_views,
        &teacher_views,
        &mem,
        &plan,
        &LossConfig {
            tau_s: 0.1,
            tau_t: 0.07,
        },
    )
    .unwrap();
    assert_eq!(report.grads.len(), student_views.len());
    for (cache, gz) in caches.iter().zip(&report.grads) {
        let _ = backward(&student, cache, gz).unwrap();
    }
    assert_eq!(teacher, teacher_frozen);
}
