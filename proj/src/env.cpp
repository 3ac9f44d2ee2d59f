#include "prl/env.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>

namespace prl {

void ControlVector::validate() const {
  if (shoot != 0 && shoot != 1) throw ValidationError("control shoot component must be 0 or 1");
  if (horizontal < -1 || horizontal > 1) throw ValidationError("control horizontal component must be -1, 0 or 1");
  if (vertical < -1 || vertical > 1) throw ValidationError("control vertical component must be -1, 0 or 1");
}

ControlVector encode_control(const Buttons& buttons) {
  if (buttons.left && buttons.right) throw ValidationError("left and right pressed together");
  if (buttons.up && buttons.down) throw ValidationError("up and down pressed together");
  ControlVector c;
  c.shoot = buttons.shoot ? 1 : 0;
  c.horizontal = buttons.right ? 1 : (buttons.left ? -1 : 0);
  c.vertical = buttons.up ? 1 : (buttons.down ? -1 : 0);
  return c;
}

Buttons decode_control(const ControlVector& control) {
  control.validate();
  return Buttons{control.shoot == 1, control.horizontal < 0, control.horizontal > 0, control.vertical > 0,
                 control.vertical < 0};
}

std::vector<TargetVector> build_targets(std::span<const StepOutcome> outcomes) {
  std::vector<TargetVector> targets;
  targets.reserve(outcomes.size());
  bool died = false, scored = false;
  for (const auto& o : outcomes) {
    died = died || o.died;
    scored = scored || o.scored;
    targets.push_back({died ? 1 : 0, (!died && scored) ? 1 : 0});
  }
  return targets;
}

Frame frame_preprocess(const Frame& previous, const Frame& current, Preprocess mode) {
  if (mode == Preprocess::identity) return current;
  if (previous.height != current.height || previous.width != current.width) {
    throw DimensionError("frame_preprocess: frames differ in size");
  }
  Frame out = current;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = std::max(previous.pixels[i], current.pixels[i]);
  return out;
}

Environment::Environment(std::size_t height, std::size_t width, std::size_t frame_stack, Preprocess preprocess)
    : height_(height), width_(width), frame_stack_(frame_stack), preprocess_(preprocess) {
  if (height < 4 || width < 4) throw ValidationError("environment frames must be at least 4x4");
  if (frame_stack == 0) throw ValidationError("frame_stack must be positive");
}

Frame Environment::reset(std::uint64_t seed) {
  rng_.seed(seed);
  reset_game(rng_);
  score_ = 0;
  steps_ = 0;
  episode_over_ = false;
  started_ = true;
  last_raw_ = render();
  stack_.clear();
  stack_.push_back(frame_preprocess(last_raw_, last_raw_, preprocess_));
  return last_raw_;
}

StepOutcome Environment::step(const ControlVector& control) {
  if (!started_ || episode_over_) throw StateError("step() called on a finished episode; reset first");
  control.validate();
  const Transition t = advance(control, rng_);
  ++steps_;
  if (t.scored) ++score_;
  StepOutcome outcome;
  outcome.frame = render();
  outcome.scored = t.scored;
  outcome.died = t.died;
  outcome.episode_over = t.died || t.terminal || steps_ >= step_limit();
  outcome.truncated = outcome.episode_over && !t.died && !t.terminal;
  episode_over_ = outcome.episode_over;

  stack_.push_back(frame_preprocess(last_raw_, outcome.frame, preprocess_));
  if (stack_.size() > frame_stack_) stack_.pop_front();
  last_raw_ = outcome.frame;
  return outcome;
}

Observation Environment::observe() const {
  if (!started_) throw StateError("observe() before reset()");
  Observation obs{frame_stack_, height_, width_, {}};
  obs.pixels.reserve(frame_stack_ * height_ * width_);
  for (std::size_t i = stack_.size(); i < frame_stack_; ++i) {
    obs.pixels.insert(obs.pixels.end(), stack_.front().pixels.begin(), stack_.front().pixels.end());
  }
  for (const auto& f : stack_) obs.pixels.insert(obs.pixels.end(), f.pixels.begin(), f.pixels.end());
  return obs;
}

namespace {

const std::array<ControlVector, 3> kCatchControls{{{0, -1, 0}, {0, 0, 0}, {0, 1, 0}}};
const std::array<ControlVector, 6> kBreakoutControls{
    {{0, -1, 0}, {0, 0, 0}, {0, 1, 0}, {1, -1, 0}, {1, 0, 0}, {1, 1, 0}}};

std::size_t move_paddle(std::size_t center, int direction, std::size_t width) {
  const long next = static_cast<long>(center) + direction;
  return static_cast<std::size_t>(std::clamp(next, 1L, static_cast<long>(width) - 2));
}

Frame blank(std::size_t height, std::size_t width) {
  return Frame{height, width, std::vector<double>(height * width, 0.0)};
}

void draw_paddle(Frame& f, std::size_t center) {
  for (std::size_t c = center - 1; c <= center + 1; ++c) f.pixels[(f.height - 1) * f.width + c] = 1.0;
}

}  // namespace

CatchEnv::CatchEnv(const EnvOptions& options)
    : Environment(options.height, options.width, options.frame_stack, options.preprocess) {}

std::span<const ControlVector> CatchEnv::valid_controls() const { return kCatchControls; }

void CatchEnv::place(std::size_t paddle_center, std::size_t object_row, std::size_t object_col) {
  if (paddle_center < 1 || paddle_center > width() - 2 || object_row >= height() - 1 || object_col >= width()) {
    throw ValidationError("CatchEnv::place: position out of range");
  }
  paddle_ = paddle_center;
  object_row_ = object_row;
  object_col_ = object_col;
}

void CatchEnv::reset_game(std::mt19937_64& rng) {
  paddle_ = width() / 2;
  object_row_ = 0;
  object_col_ = std::uniform_int_distribution<std::size_t>(0, width() - 1)(rng);
}

Environment::Transition CatchEnv::advance(const ControlVector& control, std::mt19937_64&) {
  paddle_ = move_paddle(paddle_, control.horizontal, width());
  ++object_row_;
  Transition t;
  if (object_row_ == height() - 1) {
    const bool caught = object_col_ + 1 >= paddle_ && object_col_ <= paddle_ + 1;
    t.scored = caught;
    t.died = !caught;
    t.terminal = true;
  }
  return t;
}

Frame CatchEnv::render() const {
  Frame f = blank(height(), width());
  draw_paddle(f, paddle_);
  f.pixels[object_row_ * width() + object_col_] = 1.0;
  return f;
}

MiniBreakoutEnv::MiniBreakoutEnv(const EnvOptions& options)
    : Environment(options.height, options.width, options.frame_stack, options.preprocess),
      max_steps_(options.max_steps) {
  if (options.height < kFirstBrickRow + kBrickRows + 4) throw ValidationError("mini-breakout needs height >= 8");
  if (max_steps_ == 0) throw ValidationError("max_steps must be positive");
}

std::span<const ControlVector> MiniBreakoutEnv::valid_controls() const { return kBreakoutControls; }

std::size_t MiniBreakoutEnv::bricks_left() const {
  return static_cast<std::size_t>(std::count(bricks_.begin(), bricks_.end(), true));
}

void MiniBreakoutEnv::reset_game(std::mt19937_64&) {
  paddle_ = width() / 2;
  ball_row_ = static_cast<long>(height()) - 2;
  ball_col_ = static_cast<long>(paddle_);
  ball_dr_ = 0;
  ball_dc_ = 0;
  launched_ = false;
  bricks_.assign(kBrickRows * width(), true);
}

Environment::Transition MiniBreakoutEnv::advance(const ControlVector& control, std::mt19937_64& rng) {
  Transition t;
  paddle_ = move_paddle(paddle_, control.horizontal, width());
  if (!launched_) {
    ball_col_ = static_cast<long>(paddle_);
    if (control.shoot == 0) return t;
    launched_ = true;
    ball_dr_ = -1;
    ball_dc_ = std::uniform_int_distribution<int>(0, 1)(rng) == 0 ? -1 : 1;
  }
  const long w = static_cast<long>(width());
  const long h = static_cast<long>(height());
  long nc = ball_col_ + ball_dc_;
  if (nc < 0 || nc >= w) {
    ball_dc_ = -ball_dc_;
    nc = ball_col_ + ball_dc_;
  }
  long nr = ball_row_ + ball_dr_;
  if (nr < 0) {
    ball_dr_ = 1;
    nr = ball_row_ + ball_dr_;
  }
  const long first = static_cast<long>(kFirstBrickRow);
  const long last = first + static_cast<long>(kBrickRows);
  if (nr >= first && nr < last && bricks_[static_cast<std::size_t>((nr - first) * w + nc)]) {
    bricks_[static_cast<std::size_t>((nr - first) * w + nc)] = false;
    t.scored = true;
    ball_dr_ = -ball_dr_;
    t.terminal = bricks_left() == 0;
    return t;
  }
  if (nr == h - 1) {
    if (std::abs(nc - static_cast<long>(paddle_)) <= 1) {
      ball_dr_ = -1;
      ball_col_ = nc;
      return t;
    }
    ball_row_ = nr;
    ball_col_ = nc;
    t.died = true;
    return t;
  }
  ball_row_ = nr;
  ball_col_ = nc;
  return t;
}

Frame MiniBreakoutEnv::render() const {
  Frame f = blank(height(), width());
  for (std::size_t r = 0; r < kBrickRows; ++r) {
    for (std::size_t c = 0; c < width(); ++c) {
      if (bricks_[r * width() + c]) f.pixels[(kFirstBrickRow + r) * width() + c] = kBrickIntensity;
    }
  }
  draw_paddle(f, paddle_);
  f.pixels[static_cast<std::size_t>(ball_row_) * width() + static_cast<std::size_t>(ball_col_)] = 1.0;
  return f;
}

std::vector<std::string> environment_names() { return {"catch", "mini-breakout"}; }

std::unique_ptr<Environment> make_environment(std::string_view name, const EnvOptions& options) {
  if (name == "catch") return std::make_unique<CatchEnv>(options);
  if (name == "mini-breakout") return std::make_unique<MiniBreakoutEnv>(options);
  throw ValidationError("unknown environment '" + std::string(name) + "'");
}

void write_pgm(std::ostream& out, const Frame& frame) {
  out << "P2\n" << frame.width << ' ' << frame.height << "\n255\n";
  for (std::size_t r = 0; r < frame.height; ++r) {
    for (std::size_t c = 0; c < frame.width; ++c) {
      if (c) out << ' ';
      out << static_cast<int>(std::lround(frame.at(r, c) * 255.0));
    }
    out << '\n';
  }
}

}  // namespace prl
