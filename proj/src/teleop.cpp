#include "fls/teleop.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <condition_variable>
#include <csignal>
#include <thread>

namespace fls::teleop {

namespace fs = std::filesystem;

TeleopSim::TeleopSim(harness::RunConfig cfg, std::vector<phase::PhaseConstraint> constraints, fs::path demoDir)
    : cfg_(std::move(cfg)),
      constraints_(std::move(constraints)),
      demoDir_(std::move(demoDir)),
      cell_(cfg_.cell, cfg_.teleop.sourcePeg),
      detector_(cfg_.transition.velocityThreshold, cfg_.transition.nThreCollection),
      target_(cfg_.cell.geometry.homeTips) {}

void TeleopSim::submit(const ClientMessage& m) {
  std::lock_guard lock(mu_);
  inbox_.push_back(m);
}

void TeleopSim::disconnect() {
  std::lock_guard lock(mu_);
  inbox_.push_back(std::nullopt);
}

void TeleopSim::resetEpisode() {
  cell_ = cell::Cell(cfg_.cell, cfg_.teleop.sourcePeg);
  detector_ = phase::PhaseDetector(cfg_.transition.velocityThreshold, cfg_.transition.nThreCollection);
  target_ = cfg_.cell.geometry.homeTips;
  grippers_ = {false, false};
}

std::vector<ServerMessage> TeleopSim::tick() {
  std::deque<std::optional<ClientMessage>> inbox;
  {
    std::lock_guard lock(mu_);
    inbox.swap(inbox_);
  }

  std::vector<ServerMessage> out;
  std::array<std::optional<Vec3>, 2> delta;
  bool end = false;
  for (auto& item : inbox) {
    if (!item) {
      if (recording_)
        spdlog::warn("operator disconnected mid-demo, {} recorded steps discarded", recording_->steps.size());
      recording_.reset();
      delta = {};
      end = false;
      ack_ = 0;
      continue;
    }
    ++ack_;
    std::visit(
        [&](const auto& m) {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, TargetDelta>) {
            delta[armIndex(m.arm)] = m.delta;
          } else if constexpr (std::is_same_v<T, GripperCommand>) {
            grippers_[armIndex(m.arm)] = m.closed;
          } else if constexpr (std::is_same_v<T, StartDemo>) {
            if (recording_) {
              out.push_back(ErrorMessage{"a demo is already recording"});
              return;
            }
            resetEpisode();
            delta = {};
            mode_ = m.variant;
            recording_.emplace();
            recording_->sourcePeg = cfg_.teleop.sourcePeg;
            recording_->variant = m.variant;
          } else {
            if (!recording_) {
              out.push_back(ErrorMessage{"no demo is recording"});
              return;
            }
            end = true;
          }
        },
        *item);
  }

  const auto previous = target_;
  for (std::size_t i = 0; i < 2; ++i)
    if (delta[i]) target_[i] += *delta[i];

  const int phase = detector_.phaseIndex();
  std::array<Vec3, 2> force{Vec3::Zero(), Vec3::Zero()};
  if (mode_ == teacher::Variant::Constrained)
    for (Arm a : {Arm::Left, Arm::Right})
      if (const auto band = phase::activeConstraint(constraints_, phase, a))
        force[armIndex(a)].z() = phase::feedbackForce(target_[armIndex(a)].z(), *band, cfg_.teleop.feedbackGain);

  if (!cell_.apply(target_, grippers_).ikOk) {
    out.push_back(ErrorMessage{"target out of reach, command reverted"});
    target_ = previous;
  }

  const auto& state = cell_.state();
  const long t = recording_ ? static_cast<long>(recording_->steps.size()) : tick_;
  const auto step = teacher::stepFromScene(t, target_, grippers_, state);
  detector_.push(step);
  if (recording_) recording_->steps.push_back(step);

  if (end) {
    fs::create_directories(demoDir_);
    fs::path path;
    do {
      char name[64];
      std::snprintf(name, sizeof name, "teleop_%s_%03d.log", teacher::variantName(recording_->variant), saved_++);
      path = demoDir_ / name;
    } while (fs::exists(path));
    teacher::writeDemoLog(path, *recording_);
    out.push_back(DemoSaved{path.string(), static_cast<int>(recording_->steps.size())});
    spdlog::info("teleop demo saved to {} ({} steps)", path.string(), recording_->steps.size());
    recording_.reset();
  }

  StateUpdate u;
  u.tick = tick_;
  u.ack = ack_;
  u.tips = state.forcepTips;
  u.target = target_;
  u.object = scene::attachmentName(state.object.tag);
  u.grippers = grippers_;
  u.phase = phase;
  u.force = force;
  u.recording = recording_.has_value();
  if (cfg_.teleop.frameEvery > 0 && tick_ % cfg_.teleop.frameEvery == 0)
    u.frame = base64(scene::encodePng(scene::render(state, cfg_.cell.geometry)));
  out.push_back(std::move(u));
  ++tick_;
  return out;
}

namespace {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;

class Session;

}  // namespace

struct TeleopServer::Impl {
  Impl(harness::RunConfig c, std::vector<phase::PhaseConstraint> k, fs::path d)
      : tickHz(c.teleop.tickHz), sim(std::move(c), std::move(k), std::move(d)) {}

  double tickHz;
  TeleopSim sim;
  asio::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::thread net, loop;
  std::atomic<bool> running{false};

  std::mutex mu;
  std::condition_variable cv;
  bool stopped = false;
  std::shared_ptr<Session> active;  // guarded by mu

  void accept();
  void simLoop();
  bool claim(const std::shared_ptr<Session>& s);
  void release(const Session* s);
};

namespace {

/// All members are touched on the network thread only.
class Session : public std::enable_shared_from_this<Session> {
 public:
  Session(tcp::socket socket, TeleopServer::Impl& srv) : ws_(std::move(socket)), srv_(srv) {}

  void run() {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) { self->onAccept(ec); });
  }

  void send(std::string text) {
    if (closed_) return;
    outbox_.push_back(std::move(text));
    if (outbox_.size() == 1) write();
  }

 private:
  void onAccept(beast::error_code ec) {
    if (ec) return;
    ws_.text(true);
    if (!srv_.claim(shared_from_this())) {
      spdlog::info("teleop: rejecting a second operator");
      closeAfterWrite_ = true;
      send(serialize(ServerMessage{Busy{"another operator session is active"}}));
      return;
    }
    spdlog::info("teleop: operator connected");
    read();
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->onRead(ec); });
  }

  void onRead(beast::error_code ec) {
    if (ec) {
      closed_ = true;
      srv_.release(this);
      return;
    }
    const auto text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    try {
      srv_.sim.submit(parseClientMessage(text));
    } catch (const DomainError& e) {
      send(serialize(ServerMessage{ErrorMessage{e.what()}}));
    }
    read();
  }

  void write() {
    ws_.async_write(asio::buffer(outbox_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) { self->onWrite(ec); });
  }

  void onWrite(beast::error_code ec) {
    if (ec) {
      outbox_.clear();
      return;
    }
    outbox_.pop_front();
    if (!outbox_.empty()) {
      write();
    } else if (closeAfterWrite_) {
      closed_ = true;
      ws_.async_close(websocket::close_code::try_again_later,
                      [self = shared_from_this()](beast::error_code) {});
    }
  }

  websocket::stream<beast::tcp_stream> ws_;
  TeleopServer::Impl& srv_;
  beast::flat_buffer buffer_;
  std::deque<std::string> outbox_;
  bool closeAfterWrite_ = false;
  bool closed_ = false;
};

}  // namespace

bool TeleopServer::Impl::claim(const std::shared_ptr<Session>& s) {
  std::lock_guard lock(mu);
  if (active) return false;
  active = s;
  return true;
}

void TeleopServer::Impl::release(const Session* s) {
  std::lock_guard lock(mu);
  if (active.get() != s) return;
  active.reset();
  sim.disconnect();
  spdlog::info("teleop: operator disconnected");
}

void TeleopServer::Impl::accept() {
  acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    std::make_shared<Session>(std::move(socket), *this)->run();
    accept();
  });
}

void TeleopServer::Impl::simLoop() {
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / tickHz));
  auto next = clock::now();
  while (running) {
    next += period;
    auto msgs = sim.tick();
    std::shared_ptr<Session> s;
    {
      std::lock_guard lock(mu);
      s = active;
    }
    if (s)
      for (const auto& m : msgs) asio::post(ioc, [s, text = serialize(m)]() mutable { s->send(std::move(text)); });
    std::this_thread::sleep_until(next);
  }
}

TeleopServer::TeleopServer(harness::RunConfig cfg, std::vector<phase::PhaseConstraint> constraints, fs::path demoDir)
    : impl_(std::make_unique<Impl>(std::move(cfg), std::move(constraints), std::move(demoDir))) {}

TeleopServer::~TeleopServer() { stop(); }

unsigned short TeleopServer::start(unsigned short port) {
  auto& m = *impl_;
  const tcp::endpoint ep(asio::ip::make_address("127.0.0.1"), port);
  m.acceptor.open(ep.protocol());
  m.acceptor.set_option(asio::socket_base::reuse_address(true));
  m.acceptor.bind(ep);
  m.acceptor.listen();
  m.running = true;
  m.accept();
  m.net = std::thread([&m] { m.ioc.run(); });
  m.loop = std::thread([&m] { m.simLoop(); });
  const auto bound = m.acceptor.local_endpoint().port();
  spdlog::info("teleop: listening on ws://127.0.0.1:{}", bound);
  return bound;
}

void TeleopServer::stop() {
  auto& m = *impl_;
  if (m.running.exchange(false)) {
    m.ioc.stop();
    if (m.loop.joinable()) m.loop.join();
    if (m.net.joinable()) m.net.join();
  }
  std::lock_guard lock(m.mu);
  m.stopped = true;
  m.cv.notify_all();
}

void TeleopServer::wait() {
  auto& m = *impl_;
  std::unique_lock lock(m.mu);
  m.cv.wait(lock, [&] { return m.stopped; });
}

namespace {
std::atomic<bool> gInterrupted{false};
}

void serveTeleop(const harness::RunConfig& cfg, unsigned short port) {
  std::vector<phase::PhaseConstraint> constraints;
  const auto path = cfg.out / "constraints.txt";
  if (fs::exists(path)) {
    constraints = phase::readConstraints(path);
  } else {
    spdlog::warn("{} not found, extracting constraints from the scripted exemplary demo", path.string());
    const auto ex = teacher::exemplaryDemo(cfg.cell, cfg.exemplaryPeg, cfg.teacher);
    constraints = phase::extractConstraints(
        ex.steps, phase::detectPhases(ex.steps, cfg.transition.velocityThreshold, cfg.transition.nThreConstraintGen));
  }
  TeleopServer server(cfg, std::move(constraints), cfg.out / "teleop");
  server.start(port);
  std::signal(SIGINT, [](int) { gInterrupted = true; });
  std::signal(SIGTERM, [](int) { gInterrupted = true; });
  while (!gInterrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
}

}  // namespace fls::teleop
