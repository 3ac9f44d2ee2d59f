#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prl/errors.hpp"

namespace prl {

/// Controller input: shoot in {0,1}, horizontal and vertical in {-1,0,1}.
/// Right and up are the positive directions.
struct ControlVector {
  int shoot = 0;
  int horizontal = 0;
  int vertical = 0;

  bool operator==(const ControlVector&) const = default;
  void validate() const;
};

struct Buttons {
  bool shoot = false;
  bool left = false;
  bool right = false;
  bool up = false;
  bool down = false;

  bool operator==(const Buttons&) const = default;
};

ControlVector encode_control(const Buttons& buttons);
Buttons decode_control(const ControlVector& control);

/// Grayscale image with values in [0,1], row-major.
struct Frame {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  double at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
  bool operator==(const Frame&) const = default;
};

/// The last F preprocessed frames, oldest first.
struct Observation {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  std::span<const double> frame(std::size_t index) const {
    return std::span<const double>(pixels).subspan(index * height * width, height * width);
  }
  bool operator==(const Observation&) const = default;
};

struct StepOutcome {
  Frame frame;
  bool scored = false;
  bool died = false;
  bool episode_over = false;
  /// The episode was cut off by its step limit rather than reaching a
  /// terminal state, so nothing is known about the steps that would follow.
  bool truncated = false;
};

struct TargetVector {
  int died_by_now = 0;
  int scored_clean = 0;

  bool operator==(const TargetVector&) const = default;
};

/// Cumulative per-step flags relative to the window start.
std::vector<TargetVector> build_targets(std::span<const StepOutcome> outcomes);

enum class Preprocess { identity, max2 };

Frame frame_preprocess(const Frame& previous, const Frame& current, Preprocess mode);

/// Base for the toy games. Handles frame history and observation stacking;
/// subclasses implement the game rules.
class Environment {
 public:
  Environment(std::size_t height, std::size_t width, std::size_t frame_stack, Preprocess preprocess);
  virtual ~Environment() = default;

  virtual std::string_view name() const = 0;
  /// Controls a policy may choose from. Sampling is uniform over this set.
  virtual std::span<const ControlVector> valid_controls() const = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;
  /// True while the game waits for shoot before anything moves.
  virtual bool awaiting_launch() const { return false; }

  Frame reset(std::uint64_t seed);
  StepOutcome step(const ControlVector& control);
  Observation observe() const;

  bool episode_over() const { return episode_over_; }
  int score() const { return score_; }
  std::size_t steps() const { return steps_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t frame_stack() const { return frame_stack_; }

 protected:
  struct Transition {
    bool scored = false;
    bool died = false;
    bool terminal = false;
  };
  virtual void reset_game(std::mt19937_64& rng) = 0;
  virtual Transition advance(const ControlVector& control, std::mt19937_64& rng) = 0;
  virtual Frame render() const = 0;
  /// Steps after which an episode that has not ended is truncated.
  virtual std::size_t step_limit() const = 0;

  std::mt19937_64 rng_;

 private:
  std::size_t height_, width_, frame_stack_;
  Preprocess preprocess_;
  Frame last_raw_;
  std::deque<Frame> stack_;
  int score_ = 0;
  std::size_t steps_ = 0;
  bool episode_over_ = true;
  bool started_ = false;
};

struct EnvOptions {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t frame_stack = 4;
  Preprocess preprocess = Preprocess::identity;
  std::size_t max_steps = 200;
};

/// A single object falls one row per step from the top row; a three pixel
/// paddle on the bottom row catches it (scored) or misses it (died).
/// Either way the episode ends when the object reaches the bottom row.
class CatchEnv final : public Environment {
 public:
  explicit CatchEnv(const EnvOptions& options = {});

  std::string_view name() const override { return "catch"; }
  std::span<const ControlVector> valid_controls() const override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<CatchEnv>(*this); }

  std::size_t paddle_center() const { return paddle_; }
  std::size_t object_row() const { return object_row_; }
  std::size_t object_col() const { return object_col_; }
  void place(std::size_t paddle_center, std::size_t object_row, std::size_t object_col);

 protected:
  void reset_game(std::mt19937_64& rng) override;
  Transition advance(const ControlVector& control, std::mt19937_64& rng) override;
  Frame render() const override;
  std::size_t step_limit() const override { return height() + 1; }

 private:
  std::size_t paddle_ = 0;
  std::size_t object_row_ = 0;
  std::size_t object_col_ = 0;
};

/// Paddle, ball and two rows of bricks. The ball rests on the paddle until
/// shoot launches it; hitting a brick scores, missing the ball at the bottom
/// ends the episode.
class MiniBreakoutEnv final : public Environment {
 public:
  explicit MiniBreakoutEnv(const EnvOptions& options = {});

  std::string_view name() const override { return "mini-breakout"; }
  std::span<const ControlVector> valid_controls() const override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<MiniBreakoutEnv>(*this); }
  bool awaiting_launch() const override { return !launched_; }

  static constexpr double kBrickIntensity = 128.0 / 255.0;
  static constexpr std::size_t kFirstBrickRow = 2;
  static constexpr std::size_t kBrickRows = 2;

  std::size_t bricks_left() const;

 protected:
  void reset_game(std::mt19937_64& rng) override;
  Transition advance(const ControlVector& control, std::mt19937_64& rng) override;
  Frame render() const override;
  std::size_t step_limit() const override { return max_steps_; }

 private:
  std::size_t max_steps_;
  std::size_t paddle_ = 0;
  long ball_row_ = 0;
  long ball_col_ = 0;
  int ball_dr_ = 0;
  int ball_dc_ = 0;
  bool launched_ = false;
  std::vector<bool> bricks_;
};

std::vector<std::string> environment_names();
/// Environment by name ("catch", "mini-breakout"); ValidationError otherwise.
std::unique_ptr<Environment> make_environment(std::string_view name, const EnvOptions& options = {});

/// Plain (P2) portable graymap dump of a frame.
void write_pgm(std::ostream& out, const Frame& frame);

}  // namespace prl
