#include "crashloc/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <unordered_set>

#include "crashloc/random.hpp"
#include <nlohmann/json.hpp>

namespace crashloc {

namespace {

const std::vector<std::string> kCrashSiteSystem = {
    "ntdll.dll!RtlpLowFragHeapAllocFromContext",
    "ntdll.dll!RtlEnterCriticalSection",
    "ntdll.dll!RtlpWaitOnCriticalSection",
    "ntdll.dll!NtWaitForSingleObject",
    "kernelbase.dll!WaitForSingleObjectEx",
    "kernelbase.dll!GetQueuedCompletionStatus",
    "user32.dll!CallWindowProcW",
    "user32.dll!PeekMessageW",
    "combase.dll!CoWaitForMultipleHandles",
    "rpcrt4.dll!NdrClientCall2",
    "win32u.dll!NtUserMsgWaitForMultipleObjectsEx",
    "nt!KiPageFault",
    "win32kfull.sys!xxxSendMessage",
};

const std::vector<std::string> kCallerSystem = {
    "user32.dll!UserCallWinProcCheckWow",
    "user32.dll!CallWindowProcW",
    "combase.dll!CoCreateInstance",
    "rpcrt4.dll!NdrStubCall2",
    "kernelbase.dll!WaitForMultipleObjectsEx",
    "shcore.dll!SHTaskPoolItem::ThreadProc",
    "ntdll.dll!TppWorkerThread",
    "ntdll.dll!RtlpTpWorkCallback",
};

const std::vector<std::string> kGraphicsSystem = {
    "d3d11.dll!NDXGI::CDevice::RotateResourceIdentities",
    "d3d11.dll!CContext::TID3D11DeviceContext_Map_<1>",
    "d3d11.dll!CDevice::CreateTexture2D",
    "dxgi.dll!CDXGISwapChain::PresentImplCore",
    "dxgi.dll!CDXGISwapChain::PresentImpl",
    "dxgi.dll!CDXGISwapChain::[IDXGISwapChain4]::Present1",
    "d3d12.dll!CCommandQueue::ExecuteCommandLists",
};

const std::vector<std::string> kHeapSystem = {
    "ntdll.dll!RtlReportCriticalFailure", "ntdll.dll!RtlpHeapHandleError",
    "ntdll.dll!RtlpLogHeapFailure",       "ntdll.dll!RtlpFreeHeapInternal",
    "ntdll.dll!RtlFreeHeap",
};

const std::vector<std::string> kStdLib = {
    "ucrtbase.dll!memcpy",
    "vcruntime140.dll!memcpy",
    "vcruntime140.dll!memset",
    "ucrtbase.dll!strlen",
    "ucrtbase.dll!wcsncpy_s",
    "ucrtbase.dll!qsort",
    "msvcp140.dll!std::_Mutex_base::lock",
    "msvcp140.dll!std::basic_string<char>::append",
    "msvcp140.dll!std::locale::_Init",
    "msvcp140.dll!std::basic_streambuf<char>::sputn",
};

// Inlined standard-library code attributed to the application's main binary.
const std::vector<std::string> kInlinedStd = {
    "std::vector<int>::operator[]",
    "std::_Tree<std::_Tmap_traits>::_Insert_nohint",
    "std::basic_string<wchar_t>::assign",
    "std::unique_ptr<T>::reset",
};

const std::vector<std::string> kThrowHelpersTail = {
    "msvcp140.dll!std::_Throw_Cpp_error",
    "msvcp140.dll!std::_Xout_of_range",
    "msvcp140.dll!std::_Xlength_error",
};

const std::vector<std::string> kThrowSiteStd = {
    "msvcp140.dll!std::vector<int>::at",
    "msvcp140.dll!std::basic_string<char>::at",
    "msvcp140.dll!std::map<int,int>::at",
    "ucrtbase.dll!stoi",
    "msvcp140.dll!std::thread::join",
};

const std::vector<std::string> kThrowSiteSystem = {
    "combase.dll!RoOriginateError",
    "kernelbase.dll!LoadLibraryExW",
    "combase.dll!CoCreateInstance",
    "rpcrt4.dll!NdrClientCall2",
};

const std::vector<std::string> kSystemWrappers = {
    "kernelbase.dll!RaiseFailFastException",
    "ntdll.dll!KiUserExceptionDispatcher",
    "ntdll.dll!RtlDispatchException",
    "kernelbase.dll!UnhandledExceptionFilter",
};

const std::vector<std::string> kDrivers = {
    "igd10iumd64.dll!OpenAdapter10_2",
    "igd10iumd64.dll!DestroyDeviceImpl",
    "igd12umd64.dll!OpenAdapter12",
    "nvwgf2umx.dll!NVAPI_Thunk",
    "nvwgf2umx.dll!OpenAdapter12",
    "nvwgf2umx.dll!NVDEV_Thunk",
    "atidxx64.dll!XdxQueryTlsLookupTable",
    "amdxx64.dll!AmdDxExtCreate11",
    "aticfx64.dll!atiCreateDevice",
};

const std::vector<std::string> kDriverBinaries = {"igd10iumd64.dll", "nvwgf2umx.dll",
                                                  "atidxx64.dll"};

const std::vector<std::string> kProneMethods = {
    "CopyMemoryBlock",  "AllocateMemory", "ReleaseMemory",  "MapMemoryView",
    "ReadFileData",     "WriteFileAsync", "OpenFileHandle", "FlushFileCache",
    "RunThreadLoop",    "JoinWorkerThread", "ThreadMain",   "PostThreadTask",
};

const std::vector<std::string> kProneNamespaces = {
    "io::file::Stream", "storage::file::Reader", "memory::Arena", "threading::ThreadPool"};

// Framework components every app builds on, split like the app namespaces into
// background-work and UI groups.
const std::vector<std::string> kSharedWorkerComponents = {
    "Tasks::BackgroundQueue", "Tasks::WorkItem", "Sync::Replicator", "Storage::Cache::Writer"};
const std::vector<std::string> kSharedUiComponents = {
    "Ui::ViewHost", "Ui::Input::Dispatcher", "Ui::Layout::Panel", "Ui::Theme::Painter"};

const std::vector<std::string> kSharedMethods = {
    "RunTask", "HandleMessage", "Invoke", "OnTimer", "Execute", "Update", "Notify", "Render",
};

const std::vector<std::string> kOfficeWrappers = {
    "mso20win32client.dll!Mso::Logging::MsoSendStructuredTraceTag",
    "mso.dll!MsoShipAssertTagProc",
    "mso20win32client.dll!Mso::Telemetry::LogEvent",
};

const std::vector<std::string> kHelperSymbols = {
    "base::internal::RefCountedBase::Release", "base::WeakPtr::get", "Mso::TCntPtr::Release",
    "Mso::Functor::Invoke"};
constexpr const char* kWorkerOrigin = "ntdll.dll!TppWorkerThread";
constexpr const char* kThreadInit = "kernel32.dll!BaseThreadInitThunk";
constexpr const char* kThreadStart = "ntdll.dll!RtlUserThreadStart";

struct Builder {
  const GeneratorConfig& cfg;
  const AppProfile& app;
  Rng& rng;
  std::vector<std::string> texts;
  std::vector<Pool> pools;
  bool worker_components = false;

  void push(std::string text, Pool pool) {
    if (rng.bernoulli(cfg.offset_prob)) {
      char buf[24];
      std::snprintf(buf, sizeof buf, "+0x%llx",
                    static_cast<unsigned long long>(rng.between(0x10, 0xfffff)));
      text += buf;
    }
    texts.push_back(std::move(text));
    pools.push_back(pool);
  }

  std::string app_binary() {
    if (!app.shared_binaries.empty() && rng.bernoulli(0.12)) return rng.pick(app.shared_binaries);
    if (app.binaries.size() > 1 && rng.bernoulli(0.12)) return app.binaries[1 + rng.below(app.binaries.size() - 1)];
    return app.binaries.front();
  }

  // Even-indexed namespaces form the worker components, odd-indexed the UI ones.
  std::string app_namespace() {
    const bool want_worker = rng.bernoulli(cfg.component_bias) == worker_components;
    if (rng.bernoulli(cfg.shared_component_prob))
      return rng.pick(want_worker ? kSharedWorkerComponents : kSharedUiComponents);
    std::vector<std::size_t> group;
    for (std::size_t i = 0; i < app.namespaces.size(); ++i)
      if ((i % 2 == 0) == want_worker) group.push_back(i);
    if (group.empty()) return rng.pick(app.namespaces);
    return app.namespaces[group[rng.below(group.size())]];
  }

  std::string app_method_text(bool prone) {
    std::string ns;
    std::string method;
    if (prone) {
      method = rng.pick(kProneMethods);
      ns = rng.bernoulli(0.5) ? rng.pick(kProneNamespaces) : app_namespace();
    } else {
      method = rng.bernoulli(0.3) ? rng.pick(kSharedMethods) : rng.pick(app.methods);
      ns = app_namespace();
    }
    return app_binary() + "!" + ns + "::" + method;
  }

  void app_frame(bool blamed) {
    const double p = blamed ? cfg.prone_blame_prob : cfg.prone_other_prob;
    push(app_method_text(rng.bernoulli(p)), Pool::kApp);
  }

  void driver_frame() {
    if (rng.bernoulli(0.15)) {
      char buf[48];
      std::snprintf(buf, sizeof buf, "%s+0x%llx", rng.pick(kDriverBinaries).c_str(),
                    static_cast<unsigned long long>(rng.between(0x1000, 0xffffff)));
      texts.emplace_back(buf);
      pools.push_back(Pool::kDriver);
      return;
    }
    push(rng.pick(kDrivers), Pool::kDriver);
  }

  void stdlib_frame() {
    if (rng.bernoulli(0.25)) {
      push(app.binaries.front() + "!" + rng.pick(kInlinedStd), Pool::kStdLib);
    } else {
      push(rng.pick(kStdLib), Pool::kStdLib);
    }
  }

  void system_frame(const std::vector<std::string>& pool) {
    if (rng.bernoulli(cfg.symbolless_prob)) {
      char buf[48];
      std::snprintf(buf, sizeof buf, "kernelbase.dll+0x%llx",
                    static_cast<unsigned long long>(rng.between(0x1000, 0xfffff)));
      texts.emplace_back(buf);
      pools.push_back(Pool::kSystem);
      return;
    }
    push(rng.pick(pool), Pool::kSystem);
  }

  void app_wrapper_chain() {
    // Crash-reporting helpers sit on top, in the order they were called.
    const std::size_t n = 1 + rng.below(std::min<std::size_t>(2, app.wrappers.size()));
    std::vector<std::string> chosen = app.wrappers;
    rng.shuffle(chosen);
    for (std::size_t i = 0; i < n; ++i) push(chosen[i], Pool::kWrapper);
  }

  // Skip region at the crash site for the generic classes.
  void skip_region(Pool top) {
    switch (top) {
      case Pool::kWrapper:
        if (rng.bernoulli(0.7)) {
          app_wrapper_chain();
        } else {
          push(rng.pick(kSystemWrappers), Pool::kWrapper);
        }
        break;
      case Pool::kStdLib:
        stdlib_frame();
        if (rng.bernoulli(0.3)) stdlib_frame();
        break;
      default:
        system_frame(kCrashSiteSystem);
        if (rng.bernoulli(0.35)) system_frame(kCrashSiteSystem);
        break;
    }
    if (rng.bernoulli(0.15)) {
      // Mixed regions: e.g. a wrapper that called into the system.
      if (rng.bernoulli(0.5)) {
        system_frame(kCrashSiteSystem);
      } else {
        stdlib_frame();
      }
    }
  }

  void blame_candidate(bool allow_driver) {
    if (allow_driver && rng.bernoulli(cfg.driver_blame_prob)) {
      driver_frame();
      graphics_chain();
    } else {
      app_frame(true);
    }
  }

  void graphics_chain() {
    const std::size_t n = 1 + rng.below(3);
    for (std::size_t i = 0; i < n; ++i) system_frame(kGraphicsSystem);
  }

  void caller_frames(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng.uniform();
      if (u < 0.05) {
        system_frame(kCallerSystem);
      } else if (u < 0.07) {
        stdlib_frame();
      } else {
        app_frame(false);
      }
    }
  }

  void helper_frame(bool skipped) {
    push(app.binaries.front() + "!" + rng.pick(kHelperSymbols), skipped ? Pool::kWrapper : Pool::kApp);
  }

  void tail(std::size_t room, bool worker) {
    const std::vector<std::pair<std::string, Pool>> bottom = {
        {worker ? kWorkerOrigin : app.entry, worker ? Pool::kSystem : Pool::kApp},
        {kThreadInit, Pool::kSystem},
        {kThreadStart, Pool::kSystem}};
    const std::size_t n = std::min<std::size_t>(room, bottom.size());
    for (std::size_t i = bottom.size() - n; i < bottom.size(); ++i) {
      texts.push_back(bottom[i].first);
      pools.push_back(bottom[i].second);
    }
  }
};

std::size_t sample_depth(Rng& rng, double median, double sigma) {
  const double x = std::exp(std::log(median) + sigma * rng.normal());
  const double clamped = std::clamp(std::round(x), 1.0, static_cast<double>(kMaxStackDepth));
  return static_cast<std::size_t>(clamped);
}

// Completes a stack whose first `texts.size()` frames are placed, up to `depth`.
void finish(Builder& b, std::size_t depth, bool worker) {
  const std::size_t placed = b.texts.size();
  if (placed >= depth) return;
  std::size_t room = depth - placed;
  const std::size_t tail_n = room >= 4 ? 3 : (room >= 2 ? 2 : 0);
  b.caller_frames(room - tail_n);
  b.tail(tail_n, worker);
}

GeneratedRecord build_record(const GeneratorConfig& cfg, Rng& rng) {
  const AppProfile& app = cfg.apps[rng.below(cfg.apps.size())];

  std::vector<std::string> class_names;
  std::vector<double> class_w;
  for (const auto& [name, w] : cfg.class_weights) {
    class_names.push_back(name);
    class_w.push_back(w);
  }
  const std::string cls = class_names[rng.categorical(class_w)];

  Builder b{cfg, app, rng, {}, {}};
  GeneratedRecord out;
  const bool skip_class = cls == cfg.helper_skip_class;
  const bool worker = rng.bernoulli(skip_class ? cfg.worker_origin_prob : 1.0 - cfg.worker_origin_prob);
  b.worker_components = skip_class;

  if (cls == "STACK_OVERFLOW") {
    std::size_t depth = sample_depth(rng, cfg.overflow_depth_median, cfg.overflow_depth_sigma);
    if (!rng.bernoulli(cfg.overflow_top_prob)) {
      const std::size_t prefix = 1 + rng.below(2);
      for (std::size_t i = 0; i < prefix; ++i) {
        const double u = rng.uniform();
        if (u < 0.55) {
          b.app_frame(false);
        } else if (u < 0.8) {
          b.stdlib_frame();
        } else {
          b.system_frame(kCrashSiteSystem);
        }
      }
    }
    const std::size_t start = b.texts.size();
    const std::size_t len = 1 + rng.below(4);
    std::vector<std::string> cycle;
    std::unordered_set<std::string> used;
    while (cycle.size() < len) {
      auto t = b.app_method_text(rng.bernoulli(cfg.prone_other_prob));
      if (used.insert(t).second) cycle.push_back(t);
    }
    depth = std::max(depth, start + 3 * len + 2);
    depth = std::min(depth, kMaxStackDepth);
    const std::size_t tail_n = 2;
    const std::size_t reps = (depth - start - tail_n) / len;
    for (std::size_t r = 0; r < reps; ++r) {
      for (const auto& t : cycle) {
        b.texts.push_back(t);
        b.pools.push_back(Pool::kApp);
      }
    }
    b.caller_frames(depth - tail_n - b.texts.size());
    b.tail(tail_n, worker);
    out.cycle_start = start;
    out.cycle_length = len;
  } else {
    std::size_t depth = sample_depth(rng, cfg.depth_median, cfg.depth_sigma);
    if (cls == "CPP_EXCEPTION") {
      b.push("kernelbase.dll!RaiseException", Pool::kWrapper);
      if (rng.bernoulli(0.7)) b.push("vcruntime140.dll!_CxxThrowException", Pool::kWrapper);
      if (rng.bernoulli(0.4)) b.push(rng.pick(kThrowHelpersTail), Pool::kWrapper);
      const double u = rng.uniform();
      if (u < 0.5) {
        b.app_frame(true);
      } else if (u < 0.85) {
        b.push(rng.pick(kThrowSiteStd), Pool::kStdLib);
      } else {
        b.push(rng.pick(kThrowSiteSystem), Pool::kSystem);
      }
    } else if (cls == "HEAP_CORRUPTION") {
      const std::size_t first = rng.below(2);
      const std::size_t n = 2 + rng.below(3);
      for (std::size_t i = 0; i < n && first + i < kHeapSystem.size(); ++i)
        b.push(kHeapSystem[first + i], Pool::kSystem);
      if (rng.bernoulli(0.4)) b.push("ucrtbase.dll!_free_base", Pool::kStdLib);
      b.app_frame(true);
    } else {
      std::vector<double> w(cfg.pool_weights.begin(), cfg.pool_weights.end());
      const auto top = static_cast<Pool>(rng.categorical(w));
      if (top == Pool::kApp) {
        if (rng.bernoulli(cfg.helper_frame_prob)) {
          b.helper_frame(skip_class);
          if (skip_class) b.app_frame(true);
        } else {
          b.app_frame(true);
        }
      } else if (top == Pool::kDriver) {
        b.driver_frame();
        b.graphics_chain();
      } else {
        b.skip_region(top);
        b.blame_candidate(true);
      }
    }
    // A sampled depth too short for the crash-site pattern is extended below it,
    // which keeps short patterned stacks from all blaming their bottom frame.
    if (depth < b.texts.size() + 1) depth = b.texts.size() + 1 + rng.below(b.texts.size() + 1);
    finish(b, depth, worker);
  }

  out.pools = b.pools;
  for (const auto& t : b.texts) out.record.stack.push_back(parse_frame(t));
  out.record.problem_class = cls;
  out.record.app = app.name;
  out.record.blame_index = hidden_blame_rule(out.pools, cls, out.cycle_start);
  out.record.timestamp = cfg.start_ts + static_cast<std::int64_t>(
                                            rng.below(static_cast<std::uint64_t>(cfg.window_seconds)));
  return out;
}

}  // namespace

const char* pool_name(Pool p) {
  switch (p) {
    case Pool::kApp: return "app";
    case Pool::kDriver: return "driver";
    case Pool::kSystem: return "system";
    case Pool::kStdLib: return "stdlib";
    case Pool::kWrapper: return "wrapper";
  }
  return "?";
}

std::size_t hidden_blame_rule(const std::vector<Pool>& pools, const std::string& problem_class,
                              std::optional<std::size_t> cycle_start) {
  if (pools.empty()) return 0;
  if (problem_class == "STACK_OVERFLOW" && cycle_start) return *cycle_start;
  if (problem_class == "CPP_EXCEPTION") {
    std::size_t i = 0;
    while (i + 1 < pools.size() && pools[i] == Pool::kWrapper) ++i;
    return i;
  }
  for (std::size_t i = 0; i < pools.size(); ++i) {
    if (pools[i] == Pool::kApp || pools[i] == Pool::kDriver) return i;
  }
  return 0;
}

AppProfile builtin_app(const std::string& name) {
  AppProfile a;
  a.name = name;
  if (name == "msedge") {
    a.binaries = {"msedge.dll", "msedge.exe"};
    a.namespaces = {"gl::DirectCompositionChildSurfaceWin", "gl::GLSurfaceAdapter",
                    "gpu::PassThroughImageTransportSurface", "gpu::CommandBufferStub",
                    "content::RenderFrameImpl", "blink::LocalFrameView",
                    "net::HttpCache::Transaction", "base::internal::Invoker",
                    "viz::DisplayScheduler", "cc::LayerTreeHostImpl"};
    a.methods = {"ReleaseDrawTexture", "SwapBuffers", "PostSubBuffer", "OnMessageReceived",
                 "BeginMainFrame", "UpdateLayers", "DidCommit", "ProcessIncomingMessages",
                 "PaintContents", "ScheduleDraw", "HandleInputEvent", "OnBeginFrame"};
    a.wrappers = {"msedge_elf.dll!crash_reporter::DumpWithoutCrashing",
                  "msedge.dll!base::debug::DumpWithoutCrashing",
                  "msedge.dll!logging::LogMessage::~LogMessage"};
    a.entry = "msedge.exe!wWinMain";
  } else if (name == "excel") {
    a.binaries = {"excel.exe"};
    a.shared_binaries = {"mso.dll", "mso20win32client.dll"};
    a.namespaces = {"Calc::Engine", "Calc::Formula", "Grid::CellRenderer", "Grid::Selection",
                    "Workbook::Loader", "Chart::SeriesBuilder", "Mso::Document",
                    "PivotTable::Cache", "Ribbon::Controls", "Mso::Async::Queue"};
    a.methods = {"Recalculate", "EvaluateCell", "RenderRange", "LoadSheet",
                 "ApplyFormat", "BuildSeries", "RefreshCache", "InvalidateRect",
                 "CommitEdit", "ParseFormula", "ResolveReference", "OnIdle"};
    a.wrappers = kOfficeWrappers;
    a.entry = "excel.exe!WinMain";
  } else if (name == "winword") {
    a.binaries = {"winword.exe"};
    a.shared_binaries = {"wwlib.dll", "mso.dll"};
    a.namespaces = {"Layout::PageBuilder", "Layout::LineBreaker", "Doc::Paragraph",
                    "Doc::StyleSheet", "Render::TextRun", "Spell::Checker", "Mso::Document",
                    "Collab::SyncEngine", "Table::Grid", "Print::Spooler"};
    a.methods = {"FormatLine", "LayoutPage", "ApplyStyle", "RenderRun",
                 "CheckSpelling", "MergeChanges", "InsertTable", "UpdateFields",
                 "PaginateDocument", "ReflowText", "SaveRevision", "OnIdle"};
    a.wrappers = kOfficeWrappers;
    a.wrappers.push_back("wwlib.dll!Wd::Trace::LogTag");
    a.entry = "winword.exe!WinMain";
  } else if (name == "outlook") {
    a.binaries = {"outlook.exe"};
    a.shared_binaries = {"olmapi32.dll", "mso.dll"};
    a.namespaces = {"Mail::Store", "Mail::SyncManager", "Calendar::Scheduler",
                    "Ui::ReadingPane", "Search::Indexer", "Mapi::Session", "Mso::Document",
                    "Rules::Engine", "Contacts::Cache", "Addin::Host"};
    a.methods = {"SyncFolder", "OpenMessage", "RenderItem", "IndexItems",
                 "ApplyRules", "LoadContacts", "ResolveRecipient", "SendMessage",
                 "DownloadHeaders", "ExpandConversation", "NotifyChange", "OnIdle"};
    a.wrappers = kOfficeWrappers;
    a.wrappers.push_back("olmapi32.dll!MAPI::Trace::LogEvent");
    a.entry = "outlook.exe!WinMain";
  } else {
    throw std::invalid_argument("unknown built-in app '" + name + "'");
  }
  return a;
}

std::vector<std::string> builtin_app_names() { return {"msedge", "excel", "winword", "outlook"}; }

GeneratorConfig default_generator_config() {
  GeneratorConfig c;
  for (const auto& n : builtin_app_names()) c.apps.push_back(builtin_app(n));
  // app, driver, system, stdlib, wrapper
  c.pool_weights = {0.84, 0.10, 0.02, 0.02, 0.02};
  c.class_weights = {{"INVALID_POINTER_READ", 0.27}, {"NULL_POINTER_READ", 0.24},
                     {"HEAP_CORRUPTION", 0.10},      {"APPLICATION_FAULT", 0.19},
                     {"CPP_EXCEPTION", 0.11},        {"STACK_OVERFLOW", 0.09}};
  c.crash_prone_tokens = {"memory", "file", "thread"};
  return c;
}

void GeneratorConfig::validate() const {
  auto check_mixture = [](const auto& weights, const char* what) {
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw std::invalid_argument(std::string(what) + ": negative weight");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument(std::string(what) + ": weights must sum to 1");
  };
  check_mixture(pool_weights, "pool_weights");
  std::vector<double> cw;
  for (const auto& [name, w] : class_weights) cw.push_back(w);
  if (cw.empty()) throw std::invalid_argument("class_weights: empty");
  check_mixture(cw, "class_weights");
  if (record_count < 1) throw std::invalid_argument("record_count must be >= 1");
  if (apps.empty()) throw std::invalid_argument("app catalog is empty");
  for (const auto& a : apps) {
    if (a.binaries.empty() || a.namespaces.empty() || a.methods.empty() || a.wrappers.empty())
      throw std::invalid_argument("app '" + a.name + "' has empty pools");
  }
  if (!(depth_median >= 1.0) || !(depth_sigma >= 0.0))
    throw std::invalid_argument("invalid depth parameters");
  for (double p : {overflow_top_prob, prone_blame_prob, prone_other_prob, driver_blame_prob, offset_prob,
                   symbolless_prob, helper_frame_prob, worker_origin_prob, component_bias,
                   shared_component_prob})
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("probabilities must lie in [0, 1]");
  if (!(window_seconds > 0)) throw std::invalid_argument("window_seconds must be positive");
  if (!(duplicate_fraction >= 0.0 && duplicate_fraction < 1.0))
    throw std::invalid_argument("duplicate_fraction must lie in [0, 1)");
}

std::uint64_t GeneratorConfig::digest() const { return fnv1a(generator_config_to_text(*this)); }

std::string generator_config_to_text(const GeneratorConfig& c) {
  nlohmann::ordered_json j;
  j["record_count"] = c.record_count;
  j["seed"] = c.seed;
  std::vector<std::string> apps;
  for (const auto& a : c.apps) apps.push_back(a.name);
  j["apps"] = apps;
  nlohmann::ordered_json pw;
  for (std::size_t i = 0; i < kPoolCount; ++i) pw[pool_name(static_cast<Pool>(i))] = c.pool_weights[i];
  j["pool_weights"] = pw;
  j["class_weights"] = c.class_weights;
  j["depth_median"] = c.depth_median;
  j["depth_sigma"] = c.depth_sigma;
  j["overflow_depth_median"] = c.overflow_depth_median;
  j["overflow_depth_sigma"] = c.overflow_depth_sigma;
  j["overflow_top_prob"] = c.overflow_top_prob;
  j["prone_blame_prob"] = c.prone_blame_prob;
  j["prone_other_prob"] = c.prone_other_prob;
  j["driver_blame_prob"] = c.driver_blame_prob;
  j["offset_prob"] = c.offset_prob;
  j["symbolless_prob"] = c.symbolless_prob;
  j["helper_frame_prob"] = c.helper_frame_prob;
  j["helper_skip_class"] = c.helper_skip_class;
  j["worker_origin_prob"] = c.worker_origin_prob;
  j["component_bias"] = c.component_bias;
  j["shared_component_prob"] = c.shared_component_prob;
  j["start_ts"] = c.start_ts;
  j["window_seconds"] = c.window_seconds;
  j["duplicate_fraction"] = c.duplicate_fraction;
  j["crash_prone_tokens"] = c.crash_prone_tokens;
  return j.dump();
}

GeneratorConfig generator_config_from_text(const std::string& text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("malformed generator config: ") + e.what());
  }
  if (!j.is_object()) throw DataError("generator config must be a map");
  GeneratorConfig c = default_generator_config();
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "record_count") c.record_count = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "apps") {
        c.apps.clear();
        for (const auto& n : v) c.apps.push_back(builtin_app(n.get<std::string>()));
      } else if (key == "pool_weights") {
        c.pool_weights.fill(0.0);
        for (const auto& [pn, w] : v.items()) {
          bool found = false;
          for (std::size_t i = 0; i < kPoolCount; ++i) {
            if (pn == pool_name(static_cast<Pool>(i))) {
              c.pool_weights[i] = w.get<double>();
              found = true;
            }
          }
          if (!found) throw DataError("unknown pool '" + pn + "'");
        }
      } else if (key == "class_weights") {
        c.class_weights.clear();
        for (const auto& [cn, w] : v.items()) c.class_weights[cn] = w.get<double>();
      } else if (key == "depth_median") c.depth_median = v.get<double>();
      else if (key == "depth_sigma") c.depth_sigma = v.get<double>();
      else if (key == "overflow_depth_median") c.overflow_depth_median = v.get<double>();
      else if (key == "overflow_depth_sigma") c.overflow_depth_sigma = v.get<double>();
      else if (key == "overflow_top_prob") c.overflow_top_prob = v.get<double>();
      else if (key == "prone_blame_prob") c.prone_blame_prob = v.get<double>();
      else if (key == "prone_other_prob") c.prone_other_prob = v.get<double>();
      else if (key == "driver_blame_prob") c.driver_blame_prob = v.get<double>();
      else if (key == "offset_prob") c.offset_prob = v.get<double>();
      else if (key == "symbolless_prob") c.symbolless_prob = v.get<double>();
      else if (key == "helper_frame_prob") c.helper_frame_prob = v.get<double>();
      else if (key == "helper_skip_class") c.helper_skip_class = v.get<std::string>();
      else if (key == "worker_origin_prob") c.worker_origin_prob = v.get<double>();
      else if (key == "component_bias") c.component_bias = v.get<double>();
      else if (key == "shared_component_prob") c.shared_component_prob = v.get<double>();
      else if (key == "start_ts") c.start_ts = v.get<std::int64_t>();
      else if (key == "window_seconds") c.window_seconds = v.get<std::int64_t>();
      else if (key == "duplicate_fraction") c.duplicate_fraction = v.get<double>();
      else if (key == "crash_prone_tokens") c.crash_prone_tokens = v.get<std::vector<std::string>>();
      else throw DataError("unknown generator config field '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("bad generator config value: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  return c;
}

std::vector<GeneratedRecord> generate_detailed(const GeneratorConfig& config) {
  config.validate();
  const std::size_t n = config.record_count;

  // Forced duplicate positions are fixed up front so their count is exact.
  std::vector<bool> is_dup(n, false);
  const auto dup_count = static_cast<std::size_t>(std::llround(config.duplicate_fraction * static_cast<double>(n)));
  if (dup_count > 0 && n > 1) {
    Rng pick(derive_seed(config.seed, 0xd0d0));
    std::vector<std::size_t> positions(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) positions[i] = i + 1;
    pick.shuffle(positions);
    for (std::size_t i = 0; i < std::min(dup_count, positions.size()); ++i) is_dup[positions[i]] = true;
  }

  std::vector<GeneratedRecord> out;
  out.reserve(n);
  std::vector<std::size_t> originals;
  std::unordered_set<std::uint64_t> seen;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_dup[i]) {
      Rng rng(derive_seed(config.seed, (static_cast<std::uint64_t>(i) << 10) | 1023));
      GeneratedRecord copy = out[originals[rng.below(originals.size())]];
      copy.forced_duplicate = true;
      copy.record.timestamp =
          config.start_ts + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(config.window_seconds)));
      out.push_back(std::move(copy));
      continue;
    }
    for (std::uint64_t attempt = 0;; ++attempt) {
      Rng rng(derive_seed(config.seed, (static_cast<std::uint64_t>(i) << 10) | (attempt & 1023)) ^ (attempt >> 10));
      auto rec = build_record(config, rng);
      if (seen.insert(record_hash(rec.record)).second) {
        originals.push_back(out.size());
        out.push_back(std::move(rec));
        break;
      }
    }
  }
  return out;
}

Corpus generate_synthetic(const GeneratorConfig& config) {
  Corpus c;
  c.source = "synthetic:" + hex64(config.digest());
  for (auto& g : generate_detailed(config)) c.records.push_back(std::move(g.record));
  return c;
}

}  // namespace crashloc
